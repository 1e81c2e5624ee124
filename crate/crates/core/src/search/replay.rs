//! Serial replay of a search run.
//!
//! A multi-worker run is linearizable when its commit log can be replayed
//! one commit at a time such that the population stays at capacity and
//! every child's parent was a population member when the child was
//! selected.

use super::{CommitEvent, SearchRecord};

/// Rebuilds the population after replaying `history` under the aging rule.
/// Returns indices into `history`, oldest first.
pub fn replay_population(history: &[SearchRecord], capacity: usize) -> Vec<usize> {
    let mut pop: Vec<usize> = Vec::with_capacity(capacity + 1);
    for (i, _) in history.iter().enumerate() {
        pop.push(i);
        if pop.len() > capacity {
            let oldest = oldest_position(history, &pop);
            pop.remove(oldest);
        }
    }
    pop
}

fn oldest_position(history: &[SearchRecord], pop: &[usize]) -> usize {
    let mut best = 0;
    for (pos, &i) in pop.iter().enumerate() {
        if history[i].gen < history[pop[best]].gen {
            best = pos;
        }
    }
    best
}

/// Checks the commit log of a run against a serial replay.
pub fn verify_linearizable(
    history: &[SearchRecord],
    commits: &[CommitEvent],
    capacity: usize,
) -> Result<(), String> {
    if commits.len() != history.len() {
        return Err(format!(
            "{} commits for {} history records",
            commits.len(),
            history.len()
        ));
    }
    let n = history.len();
    // [inserted_at, removed_at) in units of committed records
    let mut inserted = vec![0usize; n];
    let mut removed = vec![usize::MAX; n];
    let mut pop: Vec<usize> = Vec::new();
    let mut last_child_gen = 0;

    for (i, (rec, ev)) in history.iter().zip(commits).enumerate() {
        if rec.index != i || ev.index != i {
            return Err(format!("record {i} is out of order"));
        }
        match ev.parent {
            None => {
                if i >= capacity {
                    return Err(format!("record {i} has no parent after initialisation"));
                }
                if rec.gen != 0 {
                    return Err(format!("initial record {i} has generation {}", rec.gen));
                }
            }
            Some(p) => {
                if i < capacity {
                    return Err(format!("record {i} has a parent during initialisation"));
                }
                if ev.selected_at > i || ev.selected_at < capacity {
                    return Err(format!(
                        "record {i} selected after {} commits",
                        ev.selected_at
                    ));
                }
                if p >= n || !(inserted[p] <= ev.selected_at && ev.selected_at < removed[p]) {
                    return Err(format!(
                        "parent {p} of record {i} was not in the population after {} commits",
                        ev.selected_at
                    ));
                }
                if history[p].genome == rec.genome {
                    return Err(format!("record {i} is identical to its parent {p}"));
                }
                if rec.gen <= last_child_gen {
                    return Err(format!("generation of record {i} did not increase"));
                }
                last_child_gen = rec.gen;
            }
        }
        inserted[i] = i + 1;
        pop.push(i);
        if pop.len() > capacity {
            let pos = oldest_position(history, &pop);
            removed[pop[pos]] = i + 1;
            pop.remove(pos);
        }
        let expected = (i + 1).min(capacity);
        if pop.len() != expected || ev.population_after != expected {
            return Err(format!(
                "population has {} members (logged {}) after commit {i}, expected {expected}",
                pop.len(),
                ev.population_after
            ));
        }
    }
    Ok(())
}

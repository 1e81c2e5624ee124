//! Aging-evolution architecture search and the random-search baseline.
//!
//! Workers share one [`PopulationState`] behind a mutex. Selection and
//! commit are short critical sections; evaluation runs outside the lock.
//! All per-task randomness is derived from the run seed and the task
//! number, so a single-worker run is fully reproducible and a resumed run
//! continues the same stream.

pub mod history;
pub mod replay;

use std::cmp::Ordering;
use std::path::Path;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::genome::{Genome, DEFAULT_FLIP_PROB};
use crate::objective::{ObjectiveBreakdown, ObjectiveWeights};
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

pub use history::{read_history, HistoryWriter};
pub use replay::{replay_population, verify_linearizable};

const INIT_STREAM: u64 = 1;
const SELECT_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;
const RANDOM_STREAM: u64 = 4;

/// Anything that can score a genome. `seed` fixes the candidate's weight
/// initialisation and data order.
pub trait Evaluator: Sync {
    fn evaluate(&self, genome: Genome, seed: u64) -> ObjectiveBreakdown;
    fn weights(&self) -> ObjectiveWeights;
}

/// Scores a genome by its operator fraction alone, optionally sleeping a
/// random time first to shake out interleavings.
#[derive(Clone, Debug)]
pub struct MockEvaluator {
    pub max_latency: Option<Duration>,
}

impl MockEvaluator {
    pub const WEIGHTS: ObjectiveWeights = ObjectiveWeights {
        alpha: 0.0,
        beta: 0.0,
        gamma: 1.0,
    };

    pub fn new() -> Self {
        Self { max_latency: None }
    }

    pub fn with_latency(max: Duration) -> Self {
        Self {
            max_latency: Some(max),
        }
    }
}

impl Default for MockEvaluator {
    fn default() -> Self {
        Self::new()
    }
}

impl Evaluator for MockEvaluator {
    fn evaluate(&self, genome: Genome, seed: u64) -> ObjectiveBreakdown {
        if let Some(max) = self.max_latency {
            let nanos = max.as_nanos().max(1) as u64;
            std::thread::sleep(Duration::from_nanos(seeded(seed).random_range(0..nanos)));
        }
        ObjectiveBreakdown::new(0.0, 0.0, genome.operator_fraction(), Self::WEIGHTS)
    }

    fn weights(&self) -> ObjectiveWeights {
        Self::WEIGHTS
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub population: usize,
    pub budget: usize,
    pub tournament: usize,
    pub p_flip: f64,
    pub seed: u64,
    pub workers: usize,
    /// Store evaluation wall time in the history. Off by default so
    /// single-worker histories are byte-for-byte reproducible.
    pub record_timing: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            population: 20,
            budget: 140,
            tournament: 5,
            p_flip: DEFAULT_FLIP_PROB,
            seed: 0,
            workers: 1,
            record_timing: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.population == 0 {
            return bad("population must be at least 1".into());
        }
        if self.budget < self.population {
            return bad(format!(
                "budget {} is smaller than the population {}",
                self.budget, self.population
            ));
        }
        if self.tournament == 0 || self.tournament > self.population {
            return bad(format!(
                "tournament size {} must be in 1..={}",
                self.tournament, self.population
            ));
        }
        if !(self.p_flip > 0.0 && self.p_flip <= 1.0) {
            return bad(format!("p_flip {} must be in (0, 1]", self.p_flip));
        }
        if self.workers == 0 {
            return bad("at least one worker is required".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchRecord {
    /// Position in the history (commit order).
    pub index: usize,
    pub genome: Genome,
    /// 0 for the initial population, then one per committed child.
    pub gen: u64,
    pub worker: usize,
    /// Training seed the candidate was evaluated with.
    pub seed: u64,
    pub breakdown: ObjectiveBreakdown,
    pub seconds: f64,
}

impl SearchRecord {
    pub fn loss(&self) -> f64 {
        self.breakdown.l
    }
}

/// Selection order: lower loss, then lower generation, then the genome
/// string.
fn better(a: &SearchRecord, b: &SearchRecord) -> Ordering {
    a.loss()
        .total_cmp(&b.loss())
        .then(a.gen.cmp(&b.gen))
        .then_with(|| a.genome.to_string().cmp(&b.genome.to_string()))
}

/// Earliest record with the lowest loss.
pub fn best_of(history: &[SearchRecord]) -> Option<&SearchRecord> {
    history.iter().reduce(|best, r| {
        if r.loss().total_cmp(&best.loss()) == Ordering::Less {
            r
        } else {
            best
        }
    })
}

/// What the coordinator saw at one commit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CommitEvent {
    pub index: usize,
    /// History index of the parent; `None` for initial records.
    pub parent: Option<usize>,
    /// History length when the parent was selected.
    pub selected_at: usize,
    pub population_after: usize,
}

/// Population and history. The population holds history indices in
/// insertion order.
#[derive(Clone, Debug, Default)]
pub struct PopulationState {
    pub capacity: usize,
    pub population: Vec<usize>,
    pub history: Vec<SearchRecord>,
    pub next_gen: u64,
}

impl PopulationState {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            population: Vec::with_capacity(capacity + 1),
            history: Vec::new(),
            next_gen: 1,
        }
    }

    /// Rebuilds the state a serial run would have after `history`.
    pub fn from_history(history: Vec<SearchRecord>, capacity: usize) -> Self {
        let population = replay_population(&history, capacity);
        let next_gen = history.iter().map(|r| r.gen).max().unwrap_or(0) + 1;
        Self {
            capacity,
            population,
            history,
            next_gen,
        }
    }

    pub fn members(&self) -> impl Iterator<Item = &SearchRecord> {
        self.population.iter().map(|&i| &self.history[i])
    }

    /// Draws `k` members without replacement and returns the history index
    /// of the best one.
    pub fn tournament<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> usize {
        sample(rng, self.population.len(), k)
            .into_iter()
            .map(|pos| self.population[pos])
            .min_by(|&a, &b| better(&self.history[a], &self.history[b]))
            .expect("tournament size is at least one")
    }

    /// Appends a record and removes the oldest member if over capacity.
    /// Initial records get generation 0, children the next counter value.
    pub fn commit(
        &mut self,
        genome: Genome,
        breakdown: ObjectiveBreakdown,
        is_child: bool,
        worker: usize,
        seed: u64,
        seconds: f64,
    ) -> &SearchRecord {
        let gen = if is_child {
            self.next_gen += 1;
            self.next_gen - 1
        } else {
            0
        };
        let index = self.history.len();
        self.history.push(SearchRecord {
            index,
            genome,
            gen,
            worker,
            seed,
            breakdown,
            seconds,
        });
        self.population.push(index);
        if self.population.len() > self.capacity {
            let mut oldest = 0;
            for (pos, &i) in self.population.iter().enumerate() {
                if self.history[i].gen < self.history[self.population[oldest]].gen {
                    oldest = pos;
                }
            }
            self.population.remove(oldest);
        }
        &self.history[index]
    }
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: SearchRecord,
    pub history: Vec<SearchRecord>,
    /// One event per record committed by this call (resumed records have
    /// none).
    pub commits: Vec<CommitEvent>,
    /// Final population as history indices.
    pub population: Vec<usize>,
    /// Number of records read back from an existing history file.
    pub resumed: usize,
}

enum Task {
    Init(Genome),
    Child {
        genome: Genome,
        parent: usize,
        selected_at: usize,
    },
}

struct Shared<'w> {
    state: PopulationState,
    dispatched: usize,
    commits: Vec<CommitEvent>,
    writer: Option<&'w mut HistoryWriter>,
    error: Option<Error>,
}

fn relock<'a, T>(m: &'a Mutex<T>) -> MutexGuard<'a, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

pub fn init_genome(seed: u64, i: usize) -> Genome {
    Genome::random(&mut seeded(derive_seed(
        derive_seed(seed, INIT_STREAM),
        i as u64,
    )))
}

pub fn eval_seed(seed: u64, task: usize) -> u64 {
    derive_seed(derive_seed(seed, EVAL_STREAM), task as u64)
}

/// Runs the search until the history holds `cfg.budget` records. With
/// `history_path`, every commit is appended to that file; records already
/// in it are resumed instead of recomputed.
pub fn run_search<E: Evaluator + ?Sized>(
    cfg: &SearchConfig,
    evaluator: &E,
    history_path: Option<&Path>,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    let weights = evaluator.weights();
    let prior = match history_path {
        Some(p) if p.exists() => read_history(p, weights)?,
        _ => Vec::new(),
    };
    if prior.len() > cfg.budget {
        return Err(Error::InvalidArgument(format!(
            "history already holds {} records, more than the budget {}",
            prior.len(),
            cfg.budget
        )));
    }
    let resumed = prior.len();
    let mut writer = match history_path {
        Some(p) => Some(HistoryWriter::append(p)?),
        None => None,
    };
    let shared = Mutex::new(Shared {
        state: PopulationState::from_history(prior, cfg.population),
        dispatched: resumed,
        commits: Vec::new(),
        writer: writer.as_mut(),
        error: None,
    });
    let ready = Condvar::new();

    if cfg.workers == 1 {
        worker_loop(0, cfg, evaluator, &shared, &ready);
    } else {
        std::thread::scope(|s| {
            for w in 0..cfg.workers {
                let (shared, ready) = (&shared, &ready);
                s.spawn(move || worker_loop(w, cfg, evaluator, shared, ready));
            }
        });
    }

    let sh = shared.into_inner().unwrap_or_else(|p| p.into_inner());
    if let Some(e) = sh.error {
        return Err(e);
    }
    let best = best_of(&sh.state.history)
        .cloned()
        .ok_or_else(|| Error::InvalidArgument("search produced no records".into()))?;
    Ok(SearchOutcome {
        best,
        history: sh.state.history,
        commits: sh.commits,
        population: sh.state.population,
        resumed,
    })
}

fn worker_loop<E: Evaluator + ?Sized>(
    worker: usize,
    cfg: &SearchConfig,
    evaluator: &E,
    shared: &Mutex<Shared<'_>>,
    ready: &Condvar,
) {
    loop {
        let (task, task_no) = {
            let mut sh = relock(shared);
            loop {
                if sh.error.is_some() || sh.dispatched >= cfg.budget {
                    return;
                }
                // Children need a full population to select from.
                if sh.dispatched < cfg.population || sh.state.history.len() >= cfg.population {
                    break;
                }
                sh = ready.wait(sh).unwrap_or_else(|p| p.into_inner());
            }
            let n = sh.dispatched;
            sh.dispatched += 1;
            let task = if n < cfg.population {
                Task::Init(init_genome(cfg.seed, n))
            } else {
                let mut rng = seeded(derive_seed(derive_seed(cfg.seed, SELECT_STREAM), n as u64));
                let parent = sh.state.tournament(cfg.tournament, &mut rng);
                let genome = match sh.state.history[parent].genome.mutate(&mut rng, cfg.p_flip) {
                    Ok(g) => g,
                    Err(e) => {
                        sh.error = Some(e);
                        ready.notify_all();
                        return;
                    }
                };
                Task::Child {
                    genome,
                    parent,
                    selected_at: sh.state.history.len(),
                }
            };
            (task, n)
        };

        let genome = match task {
            Task::Init(g) | Task::Child { genome: g, .. } => g,
        };
        let start = Instant::now();
        let seed = eval_seed(cfg.seed, task_no);
        let breakdown = evaluator.evaluate(genome, seed);
        let seconds = if cfg.record_timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };

        let mut sh = relock(shared);
        let (parent, selected_at) = match task {
            Task::Init(_) => (None, sh.state.history.len()),
            Task::Child {
                parent,
                selected_at,
                ..
            } => (Some(parent), selected_at),
        };
        let rec = sh
            .state
            .commit(genome, breakdown, parent.is_some(), worker, seed, seconds)
            .clone();
        let event = CommitEvent {
            index: rec.index,
            parent,
            selected_at,
            population_after: sh.state.population.len(),
        };
        sh.commits.push(event);
        if let Some(w) = sh.writer.as_mut() {
            if let Err(e) = w.write(&rec) {
                sh.error = Some(e);
            }
        }
        ready.notify_all();
    }
}

#[derive(Clone, Debug)]
pub struct RandomSearchOutcome {
    pub best: SearchRecord,
    pub history: Vec<SearchRecord>,
}

/// The `i`-th genome of the random-search stream for `seed`. Streams are
/// nested: the first `n` draws do not depend on the total count.
pub fn random_genome(seed: u64, i: usize) -> Genome {
    Genome::random(&mut seeded(derive_seed(
        derive_seed(seed, RANDOM_STREAM),
        i as u64,
    )))
}

/// Training seed of the `i`-th random draw.
pub fn random_eval_seed(seed: u64, i: usize) -> u64 {
    derive_seed(eval_seed(seed, i), RANDOM_STREAM)
}

/// Evaluates `n` independent uniform genomes. The history is in draw
/// order regardless of the worker count.
pub fn run_random_search<E: Evaluator + ?Sized>(
    n: usize,
    evaluator: &E,
    seed: u64,
    workers: usize,
    record_timing: bool,
) -> Result<RandomSearchOutcome> {
    if n == 0 {
        return Err(Error::InvalidArgument("random search needs n >= 1".into()));
    }
    if workers == 0 {
        return Err(Error::InvalidArgument(
            "at least one worker is required".into(),
        ));
    }
    let slots: Mutex<(usize, Vec<Option<SearchRecord>>)> = Mutex::new((0, vec![None; n]));
    let work = |worker: usize| loop {
        let i = {
            let mut g = relock(&slots);
            if g.0 >= n {
                return;
            }
            g.0 += 1;
            g.0 - 1
        };
        let genome = random_genome(seed, i);
        let start = Instant::now();
        let eval = random_eval_seed(seed, i);
        let breakdown = evaluator.evaluate(genome, eval);
        let seconds = if record_timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        relock(&slots).1[i] = Some(SearchRecord {
            index: i,
            genome,
            gen: 0,
            worker,
            seed: eval,
            breakdown,
            seconds,
        });
    };
    if workers == 1 {
        work(0);
    } else {
        std::thread::scope(|s| {
            for w in 0..workers {
                let work = &work;
                s.spawn(move || work(w));
            }
        });
    }
    let history: Vec<SearchRecord> = slots
        .into_inner()
        .unwrap_or_else(|p| p.into_inner())
        .1
        .into_iter()
        .map(|r| r.expect("every slot is filled"))
        .collect();
    let best = best_of(&history).expect("n >= 1").clone();
    Ok(RandomSearchOutcome { best, history })
}

/// Writes a whole history file at once.
pub fn write_history(path: &Path, history: &[SearchRecord]) -> Result<()> {
    let mut w = HistoryWriter::create(path)?;
    history.iter().try_for_each(|r| w.write(r))
}

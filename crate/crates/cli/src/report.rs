//! Trajectory tables, figures and the method comparison.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use nas_core::metrics::plot::{render, Mark, Series};
use nas_core::metrics::{
    csv_float, hamming_csv, hamming_to_best, metrics_csv, objective_trajectories, self_check,
    trajectories_csv, MethodMetrics, TrajectoryRow,
};
use nas_core::search::{best_of, read_history, SearchRecord};

use crate::commands::{load_net, method_metrics, BEST_CKPT};
use crate::config::RunConfig;
use crate::workspace::{cached_oracle, Workspace};

pub struct Run {
    pub label: String,
    pub path: PathBuf,
    pub history: Vec<SearchRecord>,
    pub rows: Vec<TrajectoryRow>,
}

impl Run {
    pub fn best(&self) -> &SearchRecord {
        best_of(&self.history).expect("histories are non-empty")
    }
}

/// `search/history.jsonl` is labelled `search`; other files by their stem.
fn label_of(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    if stem == "history" {
        if let Some(parent) = path.parent().and_then(|p| p.file_name()) {
            return parent.to_string_lossy().into_owned();
        }
    }
    stem
}

/// Reads and self-checks every history.
pub fn load_runs(cfg: &RunConfig, paths: &[PathBuf]) -> anyhow::Result<Vec<Run>> {
    let mut runs: Vec<Run> = Vec::new();
    for path in paths {
        let history = read_history(path, cfg.weights)
            .with_context(|| format!("reading history {}", path.display()))?;
        if history.is_empty() {
            bail!("history {} holds no complete records", path.display());
        }
        let rows = objective_trajectories(&history);
        self_check(&rows, &history, cfg.weights)
            .map_err(|msg| anyhow::anyhow!("self-check failed for {}: {msg}", path.display()))?;
        let mut label = label_of(path);
        if runs.iter().any(|r| r.label == label) {
            label = format!("{label}-{}", runs.len());
        }
        runs.push(Run {
            label,
            path: path.clone(),
            history,
            rows,
        });
    }
    Ok(runs)
}

fn finite_points(values: impl Iterator<Item = (usize, f64)>) -> Vec<(f64, f64)> {
    values
        .filter(|(_, v)| v.is_finite())
        .map(|(i, v)| (i as f64, v))
        .collect()
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_run(run: &Run, dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let rows = &run.rows;
    write(&dir.join("trajectories.csv"), &trajectories_csv(rows))?;
    let hamming = hamming_to_best(&run.history);
    write(
        &dir.join("hamming.csv"),
        &hamming_csv(&run.history, &hamming),
    )?;

    let l = finite_points(rows.iter().map(|r| (r.index, r.l)));
    let t = &run.label;
    write(
        &dir.join("objective_distribution.svg"),
        &render(
            &format!("{t}: overall objective of every explored architecture"),
            "architecture index",
            "L",
            &[Series::new("L", l.clone(), Mark::Dots)],
        ),
    )?;
    write(
        &dir.join("objective_trend.svg"),
        &render(
            &format!("{t}: overall objective trend"),
            "architecture index",
            "L",
            &[
                Series::new("L", l, Mark::Dots),
                Series::new(
                    "best so far",
                    finite_points(rows.iter().map(|r| (r.index, r.best_so_far))),
                    Mark::Line,
                ),
            ],
        ),
    )?;
    write(
        &dir.join("objectives.svg"),
        &render(
            &format!("{t}: the three objectives"),
            "architecture index",
            "value",
            &[
                Series::new(
                    "E",
                    finite_points(rows.iter().map(|r| (r.index, r.e))),
                    Mark::Line,
                ),
                Series::new(
                    "P",
                    finite_points(rows.iter().map(|r| (r.index, r.p))),
                    Mark::Line,
                ),
                Series::new(
                    "O",
                    finite_points(rows.iter().map(|r| (r.index, r.o))),
                    Mark::Line,
                ),
            ],
        ),
    )?;
    write(
        &dir.join("hamming.svg"),
        &render(
            &format!("{t}: Hamming distance to the best architecture"),
            "architecture index",
            "bits",
            &[Series::new(
                "distance",
                hamming
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| (i as f64, f64::from(d)))
                    .collect(),
                Mark::Line,
            )],
        ),
    )?;
    Ok(())
}

pub fn comparison_csv(runs: &[Run]) -> String {
    let mut s = String::from(
        "method,records,best_index,best_genome,popcount,best_L,best_E,best_P,best_O,failed\n",
    );
    for run in runs {
        let b = run.best();
        let failed = run.history.iter().filter(|r| r.breakdown.failed).count();
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            run.label,
            run.history.len(),
            b.index,
            b.genome,
            b.genome.popcount(),
            csv_float(b.breakdown.l),
            csv_float(b.breakdown.e),
            csv_float(b.breakdown.p),
            csv_float(b.breakdown.o),
            failed
        ));
    }
    s
}

/// Oracle row plus one row per run, when every run has a saved best
/// network and the oracle cache matches the config.
fn metrics_rows(cfg: &RunConfig, runs: &[Run]) -> anyhow::Result<Vec<MethodMetrics>> {
    let ckpts: Vec<PathBuf> = runs
        .iter()
        .map(|r| r.path.with_file_name(BEST_CKPT))
        .collect();
    if let Some(missing) = ckpts.iter().find(|p| !p.exists()) {
        bail!("{} not found", missing.display());
    }
    let ws = Workspace::open(cfg)?;
    let oracle = cached_oracle(&ws)?;
    let mut rows = vec![method_metrics(
        &ws,
        &oracle,
        &oracle.net,
        "oracle",
        f64::NAN,
    )?];
    for (run, ckpt) in runs.iter().zip(&ckpts) {
        let net = load_net(cfg, ckpt)?;
        if net.genome() != run.best().genome {
            bail!(
                "{} holds genome {} but the history's best is {}",
                ckpt.display(),
                net.genome(),
                run.best().genome
            );
        }
        rows.push(method_metrics(
            &ws,
            &oracle,
            &net,
            &run.label,
            run.best().loss(),
        )?);
    }
    Ok(rows)
}

pub fn report(cfg: &RunConfig, paths: &[PathBuf]) -> anyhow::Result<()> {
    if paths.is_empty() {
        bail!("report needs at least one history file");
    }
    let runs = load_runs(cfg, paths)?;
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out)?;
    for run in &runs {
        let dir = if runs.len() == 1 {
            out.clone()
        } else {
            out.join(&run.label)
        };
        write_run(run, &dir)?;
        let b = run.best();
        println!(
            "{}: {} records, best L={} genome {} (record {}), self-check passed",
            run.label,
            run.history.len(),
            csv_float(b.loss()),
            b.genome,
            b.index
        );
    }
    if runs.len() >= 2 {
        write(&out.join("comparison.csv"), &comparison_csv(&runs))?;
        let series: Vec<Series> = runs
            .iter()
            .map(|r| {
                Series::new(
                    &r.label,
                    finite_points(r.rows.iter().map(|x| (x.index, x.best_so_far))),
                    Mark::Line,
                )
            })
            .collect();
        write(
            &out.join("comparison_best_L.svg"),
            &render("best-so-far objective", "architecture index", "L", &series),
        )?;
        println!("comparison: {}", out.join("comparison.csv").display());
    }
    match metrics_rows(cfg, &runs) {
        Ok(rows) => {
            write(&out.join("metrics.csv"), &metrics_csv(&rows))?;
            println!("metrics: {}", out.join("metrics.csv").display());
        }
        Err(e) => println!("metrics.csv skipped: {e:#}"),
    }
    Ok(())
}

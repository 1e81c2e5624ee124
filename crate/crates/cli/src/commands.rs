use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::Serialize;

use nas_core::data::{center_crop_to_multiple, load_image, save_image};
use nas_core::metrics::{feature_stats, frechet_distance, tv_score, MethodMetrics};
use nas_core::network::{Checkpoint, StyleNet};
use nas_core::objective::{CandidateEvaluator, ObjectiveBreakdown, Oracle};
use nas_core::search::{run_random_search, run_search, write_history, SearchRecord};
use nas_core::tensor::Tensor;

use crate::config::RunConfig;
use crate::workspace::{self, cached_oracle, ensure_oracle, OracleStatus, Workspace};

pub const HISTORY: &str = "history.jsonl";
pub const BEST_CKPT: &str = "best.ckpt";
pub const SUMMARY: &str = "summary.json";

pub fn train_oracle(cfg: &RunConfig) -> anyhow::Result<()> {
    let ws = Workspace::open(cfg)?;
    let (oracle, status) = ensure_oracle(&ws)?;
    let dir = cfg.oracle_dir();
    match status {
        OracleStatus::CacheHit => println!("cache hit: oracle in {} is up to date", dir.display()),
        OracleStatus::Trained(mse) => println!(
            "trained oracle {} ({} steps, final train MSE {mse:.6e}) -> {}",
            oracle.net.genome(),
            cfg.oracle_train.steps,
            dir.display()
        ),
    }
    Ok(())
}

#[derive(Serialize)]
struct Summary {
    method: &'static str,
    records: usize,
    best_index: usize,
    genome: String,
    popcount: u32,
    #[serde(rename = "L")]
    l: f64,
    #[serde(rename = "E")]
    e: f64,
    #[serde(rename = "P")]
    p: f64,
    #[serde(rename = "O")]
    o: f64,
}

/// Retrains the best record with its stored seed, saves the network and
/// prints the summary line.
fn finish(
    method: &'static str,
    dir: &Path,
    ev: &CandidateEvaluator,
    history: &[SearchRecord],
    best: &SearchRecord,
) -> anyhow::Result<()> {
    if best.breakdown.failed {
        return Err(nas_core::Error::NonFinite("every candidate evaluation"))
            .context("no candidate trained successfully");
    }
    let (net, b) = ev
        .train_and_score(best.genome, best.seed)
        .with_context(|| format!("retraining best genome {}", best.genome))?;
    if b.l.to_bits() != best.loss().to_bits() {
        bail!(
            "retrained best genome scored L={} but the history holds {}",
            b.l,
            best.loss()
        );
    }
    net.to_checkpoint().save(&dir.join(BEST_CKPT))?;
    let s = Summary {
        method,
        records: history.len(),
        best_index: best.index,
        genome: best.genome.to_string(),
        popcount: best.genome.popcount(),
        l: b.l,
        e: b.e,
        p: b.p,
        o: b.o,
    };
    std::fs::write(dir.join(SUMMARY), serde_json::to_string_pretty(&s)? + "\n")?;
    println!(
        "best genome {} L={:.6e} E={:.6e} P={:.6e} O={:.6e} popcount={} (record {} of {})",
        s.genome, s.l, s.e, s.p, s.o, s.popcount, s.best_index, s.records
    );
    Ok(())
}

fn prepare(cfg: &RunConfig, sub: &str) -> anyhow::Result<(CandidateEvaluator, PathBuf)> {
    let ws = Workspace::open(cfg)?;
    let oracle = cached_oracle(&ws)?;
    let ev = ws.evaluator(Arc::new(oracle))?;
    let dir = cfg.out_dir.join(sub);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok((ev, dir))
}

pub fn search(cfg: &RunConfig) -> anyhow::Result<()> {
    let (ev, dir) = prepare(cfg, "search")?;
    let path = dir.join(HISTORY);
    let out = run_search(&cfg.search, &ev, Some(&path))
        .with_context(|| format!("search with history {}", path.display()))?;
    if out.resumed > 0 {
        println!("resumed {} records from {}", out.resumed, path.display());
    }
    println!(
        "history: {} ({} records)",
        path.display(),
        out.history.len()
    );
    finish("evolution", &dir, &ev, &out.history, &out.best)
}

pub fn random_search(cfg: &RunConfig) -> anyhow::Result<()> {
    let (ev, dir) = prepare(cfg, "random")?;
    let out = run_random_search(
        cfg.random_draws,
        &ev,
        cfg.seed,
        cfg.search.workers,
        cfg.search.record_timing,
    )?;
    let path = dir.join(HISTORY);
    write_history(&path, &out.history)?;
    println!(
        "history: {} ({} records)",
        path.display(),
        out.history.len()
    );
    finish("random", &dir, &ev, &out.history, &out.best)
}

/// Loads a network checkpoint and checks it against the configured
/// encoder channel plan.
pub fn load_net(cfg: &RunConfig, path: &Path) -> anyhow::Result<StyleNet> {
    let ckpt =
        Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if ckpt.channel_plan != cfg.encoder_channels {
        bail!(
            "checkpoint {} has channel plan {:?} but the config uses {:?}",
            path.display(),
            ckpt.channel_plan,
            cfg.encoder_channels
        );
    }
    StyleNet::from_checkpoint(&ckpt, true)
        .with_context(|| format!("restoring network from {}", path.display()))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// TV and Fréchet metrics of `net`'s stylized validation outputs. The
/// Fréchet columns need at least two pairs and are NaN otherwise.
pub fn method_metrics(
    ws: &Workspace,
    oracle: &Oracle,
    net: &StyleNet,
    method: &str,
    best_l: f64,
) -> anyhow::Result<MethodMetrics> {
    let mut net = net.clone();
    net.wct_enabled = true;
    let outputs = ws.val.stylize(&net)?;
    let tv = mean(
        &outputs
            .iter()
            .map(tv_score)
            .collect::<nas_core::Result<Vec<_>>>()?,
    );
    let (fid_style, fid_oracle) = if outputs.len() >= 2 {
        let styles: Vec<Tensor> = ws.val.pairs().iter().map(|(_, s)| s.clone()).collect();
        let own = feature_stats(&outputs, &ws.extractor)?;
        let style = feature_stats(&styles, &ws.extractor)?;
        let reference = feature_stats(oracle.outputs(), &ws.extractor)?;
        (
            frechet_distance(&own, &style)?,
            frechet_distance(&own, &reference)?,
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(MethodMetrics {
        method: method.to_string(),
        best_genome: net.genome(),
        best_l,
        fid_style,
        fid_oracle,
        tv,
    })
}

#[derive(Serialize)]
struct EvalReport {
    network: String,
    genome: String,
    #[serde(rename = "E")]
    e: f64,
    #[serde(rename = "P")]
    p: f64,
    #[serde(rename = "O")]
    o: f64,
    #[serde(rename = "L")]
    l: f64,
    tv: f64,
    fid_style: Option<f64>,
    fid_oracle: Option<f64>,
}

/// Scores a checkpoint, or the oracle itself, against the cached oracle.
pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> anyhow::Result<()> {
    let ws = Workspace::open(cfg)?;
    let oracle = Arc::new(cached_oracle(&ws)?);
    let (net, name) = match checkpoint {
        Some(p) => (load_net(cfg, p)?, p.display().to_string()),
        None => (oracle.net.clone(), "oracle".to_string()),
    };
    let ev = ws.evaluator(oracle.clone())?;
    let (e, p) = ev.score(&net)?;
    let b = ObjectiveBreakdown::new(e, p, net.genome().operator_fraction(), cfg.weights);
    let m = method_metrics(&ws, &oracle, &net, &name, b.l)?;
    let finite = |v: f64| v.is_finite().then_some(v);
    let report = EvalReport {
        network: name,
        genome: net.genome().to_string(),
        e: b.e,
        p: b.p,
        o: b.o,
        l: b.l,
        tv: m.tv,
        fid_style: finite(m.fid_style),
        fid_oracle: finite(m.fid_oracle),
    };
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(cfg.out_dir.join("eval.json"), json.clone() + "\n")?;
    println!("{json}");
    Ok(())
}

fn load_cropped(path: &Path) -> anyhow::Result<Tensor> {
    let img = load_image(path)?;
    let (cropped, changed) =
        center_crop_to_multiple(&img, 16).with_context(|| format!("image {}", path.display()))?;
    if changed {
        let (_, h, w) = img.dims3()?;
        let (_, nh, nw) = cropped.dims3()?;
        eprintln!(
            "note: centre-cropped {} from {h}x{w} to {nh}x{nw}",
            path.display()
        );
    }
    Ok(cropped)
}

pub fn stylize(
    cfg: &RunConfig,
    checkpoint: &Path,
    content: &Path,
    style: &Path,
    output: &Path,
) -> anyhow::Result<()> {
    let net = load_net(cfg, checkpoint)?;
    let c = load_cropped(content)?;
    let s = load_cropped(style)?;
    let out = net.forward(&c, Some(&s))?.clamp(0.0, 1.0);
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    save_image(&out, output)?;
    let (_, h, w) = out.dims3()?;
    println!("wrote {} ({h}x{w})", output.display());
    Ok(())
}

/// Writes synthetic PNG sets into the configured data directories.
pub fn synth_data(cfg: &RunConfig, count: Option<usize>) -> anyhow::Result<()> {
    let sizes = cfg.data.synthetic;
    let train = count.or(sizes.map(|s| s.train)).unwrap_or(8);
    let pairs = count.or(sizes.map(|s| s.pairs)).unwrap_or(8);
    let seed = sizes.map(|s| s.seed).unwrap_or(0);
    let images = workspace::synthetic_images(cfg, train, pairs, seed);
    let write = |dir: &Path, prefix: &str, set: &[&Tensor]| -> anyhow::Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, t) in set.iter().enumerate() {
            save_image(t, &dir.join(format!("{prefix}_{i:03}.png")))?;
        }
        println!("wrote {} images to {}", set.len(), dir.display());
        Ok(())
    };
    let d = &cfg.data;
    write(
        &d.train_dir,
        "train",
        &images.train.iter().collect::<Vec<_>>(),
    )?;
    write(
        &d.content_dir,
        "content",
        &images.pairs.iter().map(|p| &p.0).collect::<Vec<_>>(),
    )?;
    write(
        &d.style_dir,
        "style",
        &images.pairs.iter().map(|p| &p.1).collect::<Vec<_>>(),
    )?;
    Ok(())
}

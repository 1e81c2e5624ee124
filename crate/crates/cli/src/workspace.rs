//! Loading everything a command needs: encoder, datasets, oracle cache.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nas_core::data::{load_dir, synthetic_set, tensor_hash};
use nas_core::network::{Checkpoint, Encoder, StyleNet};
use nas_core::objective::{
    train_oracle, CandidateEvaluator, Oracle, PerceptualExtractor, TrainingSet, ValidationSet,
};
use nas_core::tensor::Tensor;

use crate::config::RunConfig;

/// Synthetic streams for the three image sets.
const TRAIN_STREAM: u64 = 10;
const CONTENT_STREAM: u64 = 11;
const STYLE_STREAM: u64 = 12;

pub const MANIFEST: &str = "manifest.json";
pub const ORACLE_CKPT: &str = "oracle.ckpt";

pub struct Images {
    pub train: Vec<Tensor>,
    pub pairs: Vec<(Tensor, Tensor)>,
}

/// Synthetic sets as configured, in memory.
pub fn synthetic_images(cfg: &RunConfig, train: usize, pairs: usize, seed: u64) -> Images {
    let [h, w] = cfg.image_size;
    let content = synthetic_set(pairs, h, w, seed, CONTENT_STREAM);
    let style = synthetic_set(pairs, h, w, seed, STYLE_STREAM);
    Images {
        train: synthetic_set(train, h, w, seed, TRAIN_STREAM),
        pairs: content.into_iter().zip(style).collect(),
    }
}

fn load_sized(dir: &Path, size: [usize; 2]) -> anyhow::Result<Vec<Tensor>> {
    let items = load_dir(dir)?;
    if items.is_empty() {
        bail!("no PNG or PPM images in {}", dir.display());
    }
    items
        .into_iter()
        .map(|(path, t)| {
            let (_, h, w) = t.dims3()?;
            if [h, w] != size {
                bail!(
                    "image {} is {h}x{w}, expected {}x{} (image_size)",
                    path.display(),
                    size[0],
                    size[1]
                );
            }
            Ok(t)
        })
        .collect()
}

pub fn load_images(cfg: &RunConfig) -> anyhow::Result<Images> {
    if let Some(s) = cfg.data.synthetic {
        return Ok(synthetic_images(cfg, s.train, s.pairs, s.seed));
    }
    let d = &cfg.data;
    let train = load_sized(&d.train_dir, cfg.image_size)?;
    let content = load_sized(&d.content_dir, cfg.image_size)?;
    let style = load_sized(&d.style_dir, cfg.image_size)?;
    if content.len() != style.len() {
        bail!(
            "{} content images in {} but {} style images in {}; pairs are matched in name order",
            content.len(),
            d.content_dir.display(),
            style.len(),
            d.style_dir.display()
        );
    }
    Ok(Images {
        train,
        pairs: content.into_iter().zip(style).collect(),
    })
}

pub fn load_encoder(cfg: &RunConfig) -> anyhow::Result<Encoder> {
    let enc = match &cfg.encoder_weights {
        Some(path) => {
            let ckpt = Checkpoint::load(path)
                .with_context(|| format!("loading encoder weights {}", path.display()))?;
            Encoder::from_named(&ckpt.tensors)?
        }
        None => Encoder::seeded(&cfg.encoder_channels, cfg.encoder_seed)?,
    };
    if enc.channels() != cfg.encoder_channels.as_slice() {
        bail!(
            "encoder weights have channels {:?} but the config lists {:?}",
            enc.channels(),
            cfg.encoder_channels
        );
    }
    Ok(enc)
}

fn encoder_bytes(enc: &Encoder) -> anyhow::Result<Vec<u8>> {
    let ckpt = Checkpoint {
        genome: String::new(),
        channel_plan: enc.channels().to_vec(),
        tensors: enc.named_tensors(),
    };
    let mut buf = Vec::new();
    ckpt.write_to(&mut buf)?;
    Ok(buf)
}

/// Encoder, datasets and extractor shared by the commands.
pub struct Workspace {
    pub cfg: RunConfig,
    pub encoder: Arc<Encoder>,
    pub train: Arc<TrainingSet>,
    pub val: Arc<ValidationSet>,
    pub extractor: Arc<PerceptualExtractor>,
    train_hashes: Vec<String>,
}

impl Workspace {
    pub fn open(cfg: &RunConfig) -> anyhow::Result<Self> {
        let encoder = Arc::new(load_encoder(cfg)?);
        let images = load_images(cfg)?;
        let train_hashes = images.train.iter().map(tensor_hash).collect();
        let train =
            TrainingSet::new(&encoder, images.train).context("building the training set")?;
        let val =
            ValidationSet::new(&encoder, images.pairs).context("building the validation set")?;
        let extractor = PerceptualExtractor::seeded(&cfg.encoder_channels, cfg.extractor_seed)?;
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            train: Arc::new(train),
            val: Arc::new(val),
            extractor: Arc::new(extractor),
            train_hashes,
        })
    }

    /// Identifies everything the oracle depends on: encoder weights,
    /// oracle training settings, training pixels and validation pixels.
    pub fn oracle_key(&self) -> anyhow::Result<String> {
        let mut h = Sha256::new();
        h.update(encoder_bytes(&self.encoder)?);
        h.update(serde_json::to_vec(&(
            &self.cfg.oracle_train,
            self.cfg.oracle_seed,
        ))?);
        for t in &self.train_hashes {
            h.update(t);
        }
        h.update(self.val.hash());
        Ok(hex::encode(h.finalize()))
    }

    pub fn evaluator(&self, oracle: Arc<Oracle>) -> anyhow::Result<CandidateEvaluator> {
        Ok(CandidateEvaluator::new(
            self.encoder.clone(),
            self.extractor.clone(),
            self.train.clone(),
            self.val.clone(),
            oracle,
            self.cfg.train,
            self.cfg.weights,
        )?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub key: String,
    pub genome: String,
    pub pairs: usize,
    pub train_mse: f64,
    pub outputs_hash: String,
}

fn output_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("outputs").join(format!("pair_{i:03}.ckpt"))
}

fn read_manifest(dir: &Path) -> Option<Manifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST)).ok()?;
    serde_json::from_str(&text).ok()
}

fn outputs_hash(outputs: &[Tensor]) -> String {
    let mut h = Sha256::new();
    for o in outputs {
        h.update(tensor_hash(o));
    }
    hex::encode(h.finalize())
}

pub enum OracleStatus {
    Trained(f64),
    CacheHit,
}

/// Trains and caches the oracle unless a manifest with the same key is
/// already present.
pub fn ensure_oracle(ws: &Workspace) -> anyhow::Result<(Oracle, OracleStatus)> {
    let dir = ws.cfg.oracle_dir();
    let key = ws.oracle_key()?;
    if let Some(m) = read_manifest(&dir) {
        if m.key == key {
            if let Ok(o) = load_oracle_files(ws, &dir, &m) {
                return Ok((o, OracleStatus::CacheHit));
            }
        }
    }
    let (oracle, mse) = train_oracle(
        ws.encoder.clone(),
        &ws.train,
        &ws.cfg.oracle_train,
        &ws.val,
        ws.cfg.oracle_seed,
    )
    .context("training the oracle")?;
    std::fs::create_dir_all(dir.join("outputs"))?;
    // the manifest goes last so an interrupted write is never a cache hit
    let _ = std::fs::remove_file(dir.join(MANIFEST));
    oracle.net.to_checkpoint().save(&dir.join(ORACLE_CKPT))?;
    for (i, o) in oracle.outputs().iter().enumerate() {
        Checkpoint::single("output", o.clone()).save(&output_path(&dir, i))?;
    }
    let manifest = Manifest {
        key,
        genome: oracle.net.genome().to_string(),
        pairs: oracle.outputs().len(),
        train_mse: mse,
        outputs_hash: outputs_hash(oracle.outputs()),
    };
    std::fs::write(
        dir.join(MANIFEST),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok((oracle, OracleStatus::Trained(mse)))
}

fn load_oracle_files(ws: &Workspace, dir: &Path, m: &Manifest) -> anyhow::Result<Oracle> {
    let net = StyleNet::from_checkpoint(&Checkpoint::load(&dir.join(ORACLE_CKPT))?, true)?;
    let outputs = (0..m.pairs)
        .map(|i| {
            let c = Checkpoint::load(&output_path(dir, i))?;
            c.tensor("output")
                .cloned()
                .ok_or_else(|| anyhow::anyhow!("output tensor missing from pair {i}"))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    if outputs_hash(&outputs) != m.outputs_hash {
        bail!("cached oracle outputs do not match the manifest");
    }
    Ok(Oracle::from_cache(net, &ws.val, outputs)?)
}

/// The cached oracle, or an error telling the user how to produce it.
pub fn cached_oracle(ws: &Workspace) -> anyhow::Result<Oracle> {
    let dir = ws.cfg.oracle_dir();
    let hint = "run `wctnas train-oracle` with the same config and --out first";
    let Some(m) = read_manifest(&dir) else {
        bail!("no oracle cache in {}; {hint}", dir.display());
    };
    if m.key != ws.oracle_key()? {
        bail!(
            "the oracle cache in {} was built from different data or settings; {hint}",
            dir.display()
        );
    }
    load_oracle_files(ws, &dir, &m)
        .with_context(|| format!("oracle cache in {} is unreadable; {hint}", dir.display()))
}

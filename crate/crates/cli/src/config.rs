//! Run configuration: one JSON document, overridable from the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use nas_core::network::DEFAULT_CHANNELS;
use nas_core::objective::{ObjectiveWeights, TrainConfig};
use nas_core::search::SearchConfig;

/// Where images come from. With `synthetic` set, the directories are
/// ignored and seeded images are generated in memory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_dir: PathBuf,
    pub content_dir: PathBuf,
    pub style_dir: PathBuf,
    pub synthetic: Option<SyntheticSizes>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSizes {
    pub train: usize,
    pub pairs: usize,
    /// Image seed, kept apart from the run seed so that changing the
    /// search seed does not invalidate the oracle cache.
    #[serde(default)]
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_dir: PathBuf::from("data/train"),
            content_dir: PathBuf::from("data/content"),
            style_dir: PathBuf::from("data/style"),
            synthetic: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Oracle cache location; `<out_dir>/oracle` when unset.
    pub oracle_dir: Option<PathBuf>,
    pub image_size: [usize; 2],
    pub data: DataConfig,
    pub encoder_channels: Vec<usize>,
    pub encoder_seed: u64,
    /// Optional encoder weights in checkpoint format, replacing the seeded
    /// surrogate.
    pub encoder_weights: Option<PathBuf>,
    pub extractor_seed: u64,
    pub oracle_seed: u64,
    pub weights: ObjectiveWeights,
    pub train: TrainConfig,
    pub oracle_train: TrainConfig,
    pub search: SearchConfig,
    pub random_draws: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            oracle_dir: None,
            image_size: [32, 32],
            data: DataConfig::default(),
            encoder_channels: DEFAULT_CHANNELS.to_vec(),
            encoder_seed: 2024,
            encoder_weights: None,
            extractor_seed: 4049,
            oracle_seed: 7,
            weights: ObjectiveWeights::default(),
            train: TrainConfig::default(),
            oracle_train: TrainConfig {
                steps: 2000,
                ..TrainConfig::default()
            },
            search: SearchConfig {
                population: 8,
                budget: 40,
                workers: 4,
                ..SearchConfig::default()
            },
            random_draws: 200,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Overlays a (possibly partial) document on the defaults. Nested
    /// objects merge key by key, so `{"search": {"budget": 12}}` keeps the
    /// default population.
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let file: Value = serde_json::from_str(text)?;
        let mut merged = serde_json::to_value(Self::default())?;
        merge(&mut merged, file);
        Ok(serde_json::from_value(merged)?)
    }

    /// Copies run-wide values into the nested configs and checks the
    /// invariants.
    pub fn resolve(mut self) -> anyhow::Result<Self> {
        self.search.seed = self.seed;
        let [h, w] = self.image_size;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            bail!("image size {h}x{w} must be non-zero multiples of 16");
        }
        if self.encoder_channels.len() != nas_core::genome::NUM_STAGES
            || self.encoder_channels.contains(&0)
        {
            bail!(
                "encoder_channels must list {} positive counts",
                nas_core::genome::NUM_STAGES
            );
        }
        self.weights.validate()?;
        self.search.validate()?;
        if self.random_draws == 0 {
            bail!("random_draws must be at least 1");
        }
        if let Some(s) = self.data.synthetic {
            if s.train == 0 || s.pairs == 0 {
                bail!("synthetic data needs at least one training image and one pair");
            }
        }
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises") + "\n"
    }

    /// Writes the resolved config as `<out>/<command>.config.json`.
    pub fn echo(&self, command: &str) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        let path = self.out_dir.join(format!("{command}.config.json"));
        std::fs::write(&path, self.to_json())
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn oracle_dir(&self) -> PathBuf {
        self.oracle_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("oracle"))
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `32` or `32x48` (height x width).
pub fn parse_image_size(s: &str) -> Result<[usize; 2], String> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let num = |p: &str| {
        p.trim()
            .parse::<usize>()
            .map_err(|_| format!("bad image size {s:?}; expected N or HxW"))
    };
    match parts[..] {
        [n] => {
            let n = num(n)?;
            Ok([n, n])
        }
        [h, w] => Ok([num(h)?, num(w)?]),
        _ => Err(format!("bad image size {s:?}; expected N or HxW")),
    }
}

use crate::genome::NUM_STAGES;
use crate::rng::{derive_seed, seeded};
use crate::tensor::{ops, Tensor};
use crate::{Error, Result};

/// Default per-stage output channels at desk scale.
pub const DEFAULT_CHANNELS: [usize; NUM_STAGES] = [8, 16, 32, 64, 128];

/// Fixed five-stage convolutional encoder.
///
/// Stage 1 is `conv3x3 + ReLU` on the image; stages 2..=5 first halve the
/// resolution with 2x2 average pooling. Weights never train.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    channels: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl Encoder {
    /// He-initialised weights drawn from `seed`, zero biases.
    pub fn seeded(channels: &[usize], seed: u64) -> Result<Self> {
        check_channels(channels)?;
        let mut weights = Vec::with_capacity(NUM_STAGES);
        let mut biases = Vec::with_capacity(NUM_STAGES);
        let mut c_in = 3;
        for (i, &c_out) in channels.iter().enumerate() {
            let mut rng = seeded(derive_seed(seed, i as u64));
            let std = (2.0 / (c_in * 9) as f64).sqrt();
            weights.push(Tensor::randn(&[c_out, c_in, 3, 3], std, &mut rng));
            biases.push(Tensor::zeros(&[c_out]));
            c_in = c_out;
        }
        Ok(Self {
            channels: channels.to_vec(),
            weights,
            biases,
        })
    }

    /// Builds an encoder from named tensors (`encoder.stage{i}.weight` and
    /// `.bias`, `i` in 1..=5), e.g. loaded from a checkpoint.
    pub fn from_named(tensors: &[(String, Tensor)]) -> Result<Self> {
        let find = |name: String| {
            tensors
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut channels = Vec::new();
        let mut c_in = 3;
        for i in 1..=NUM_STAGES {
            let w = find(format!("encoder.stage{i}.weight"))?;
            let b = find(format!("encoder.stage{i}.bias"))?;
            let [c_out, wc, 3, 3] = w.shape()[..] else {
                return Err(Error::Checkpoint(format!(
                    "encoder stage {i} weight has shape {:?}",
                    w.shape()
                )));
            };
            if wc != c_in || b.shape() != [c_out] {
                return Err(Error::Checkpoint(format!(
                    "encoder stage {i} shapes are inconsistent"
                )));
            }
            channels.push(c_out);
            weights.push(w);
            biases.push(b);
            c_in = c_out;
        }
        Ok(Self {
            channels,
            weights,
            biases,
        })
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * NUM_STAGES);
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push((format!("encoder.stage{}.weight", i + 1), w.clone()));
            out.push((format!("encoder.stage{}.bias", i + 1), b.clone()));
        }
        out
    }

    /// Stage outputs `[stage1, ..., stage5]`. Stage `i` has spatial size
    /// `H / 2^(i-1)`.
    pub fn features(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        let (c, h, w) = image.dims3()?;
        if c != 3 {
            return Err(Error::shape(
                "encoder",
                format!("expected 3 channels, got {c}"),
            ));
        }
        check_divisible(h, w)?;
        let mut feats = Vec::with_capacity(NUM_STAGES);
        let mut x = image.clone();
        for (i, (wt, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if i > 0 {
                x = ops::avg_pool2(&x)?;
            }
            x = ops::relu(&ops::conv2d(&x, wt, b, 1)?);
            feats.push(x.clone());
        }
        Ok(feats)
    }
}

fn check_channels(channels: &[usize]) -> Result<()> {
    if channels.len() != NUM_STAGES || channels.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "encoder needs {NUM_STAGES} positive channel counts, got {channels:?}"
        )));
    }
    Ok(())
}

/// Images must survive four 2x downsamples.
pub fn check_divisible(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(16) || !w.is_multiple_of(16) {
        return Err(Error::InvalidArgument(format!(
            "image size {h}x{w} is not a positive multiple of 16"
        )));
    }
    Ok(())
}

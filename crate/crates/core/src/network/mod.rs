//! Runnable networks: the fixed encoder, genome-decoded decoders, the WCT
//! and the checkpoint format tying them together.
//!
//! In stylization mode the style image is first passed through the same
//! decoder in reconstruction mode; the activations it produces at each WCT
//! site provide the target statistics for the content pass at that site.
//! The bottleneck site therefore colors with the style's encoder stage-5
//! features, and deeper-than-bottleneck sites compare like with like.

pub mod checkpoint;
mod decoder;
mod encoder;
mod wct;

use std::sync::Arc;

pub use checkpoint::Checkpoint;
pub use decoder::{Decoder, Param, INSTANCE_NORM_EPS};
pub use encoder::{check_divisible, Encoder, DEFAULT_CHANNELS};
pub use wct::{feature_moments, wct};

use crate::genome::Genome;
use crate::linalg::DEFAULT_EIG_FLOOR;
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::{Error, Result};

use decoder::SiteMode;

/// Encoder plus decoder. With `wct_enabled == false` it is a plain content
/// auto-encoder and any style input is ignored.
#[derive(Clone, Debug)]
pub struct StyleNet {
    pub encoder: Arc<Encoder>,
    pub decoder: Decoder,
    pub wct_enabled: bool,
    pub eig_floor: f64,
}

impl StyleNet {
    pub fn new(encoder: Arc<Encoder>, decoder: Decoder, wct_enabled: bool) -> Self {
        Self {
            encoder,
            decoder,
            wct_enabled,
            eig_floor: DEFAULT_EIG_FLOOR,
        }
    }

    pub fn build(
        encoder: Arc<Encoder>,
        genome: Genome,
        rng: &mut SeededRng,
        wct_enabled: bool,
    ) -> Result<Self> {
        let decoder = Decoder::build(genome, encoder.channels(), rng)?;
        Ok(Self::new(encoder, decoder, wct_enabled))
    }

    pub fn genome(&self) -> Genome {
        self.decoder.genome()
    }

    pub fn forward(&self, content: &Tensor, style: Option<&Tensor>) -> Result<Tensor> {
        let content_feats = self.encoder.features(content)?;
        let style_feats = match (self.wct_enabled, style) {
            (true, Some(s)) => {
                if s.dims3()?.0 != 3 {
                    return Err(Error::shape("forward", "style image must have 3 channels"));
                }
                Some(self.encoder.features(s)?)
            }
            (true, None) => {
                return Err(Error::InvalidArgument(
                    "stylization mode requires a style image".into(),
                ))
            }
            (false, _) => None,
        };
        self.forward_features(&content_feats, style_feats.as_deref())
    }

    /// Forward pass from precomputed encoder features.
    pub fn forward_features(
        &self,
        content_feats: &[Tensor],
        style_feats: Option<&[Tensor]>,
    ) -> Result<Tensor> {
        if !self.wct_enabled || !self.decoder.graph().has_wct() {
            return self.decoder.run(content_feats, SiteMode::Off);
        }
        let style_feats = style_feats.ok_or_else(|| {
            Error::InvalidArgument("stylization mode requires style features".into())
        })?;
        let mut sites = Vec::new();
        self.decoder
            .run(style_feats, SiteMode::Capture(&mut sites))?;
        self.decoder
            .run(content_feats, SiteMode::Apply(&sites, self.eig_floor))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = self.encoder.named_tensors();
        tensors.extend(
            self.decoder
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.value.clone())),
        );
        Checkpoint {
            genome: self.genome().to_string(),
            channel_plan: self.encoder.channels().to_vec(),
            tensors,
        }
    }

    /// Restores a network saved with [`StyleNet::to_checkpoint`].
    pub fn from_checkpoint(ckpt: &Checkpoint, wct_enabled: bool) -> Result<Self> {
        let genome: Genome = ckpt.genome.parse()?;
        let encoder = Encoder::from_named(&ckpt.tensors)?;
        if encoder.channels() != ckpt.channel_plan.as_slice() {
            return Err(Error::Checkpoint(format!(
                "channel plan {:?} disagrees with encoder tensors {:?}",
                ckpt.channel_plan,
                encoder.channels()
            )));
        }
        let decoder = Decoder::from_params(genome, encoder.channels(), &ckpt.tensors)?;
        Ok(Self::new(Arc::new(encoder), decoder, wct_enabled))
    }
}

//! Candidate training and scoring against the supervisory oracle.
//!
//! A candidate decoder is trained for pixel reconstruction with WCT off,
//! then run in stylization mode on the validation pairs. Its score is
//! `L = alpha * E + beta * P + gamma * O` where `E` is the pixel distance to
//! the oracle's stylized outputs, `P` the summed per-stage perceptual
//! distance and `O` the fraction of enabled operator bits. All Frobenius
//! norms are divided by `sqrt(element count)`.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::genome::Genome;
use crate::network::{check_divisible, Decoder, Encoder, StyleNet};
use crate::rng::{derive_seed, seeded, SeededRng};
use crate::search::Evaluator;
use crate::tensor::{ops, Adam, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            beta: 0.1,
            gamma: 0.1,
        }
    }
}

impl ObjectiveWeights {
    pub fn combine(&self, e: f64, p: f64, o: f64) -> f64 {
        self.alpha * e + self.beta * p + self.gamma * o
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// `(E, P, O, L)` plus the weights that produced `L`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveBreakdown {
    pub e: f64,
    pub p: f64,
    pub o: f64,
    pub l: f64,
    pub weights: ObjectiveWeights,
    pub failed: bool,
}

impl ObjectiveBreakdown {
    pub fn new(e: f64, p: f64, o: f64, weights: ObjectiveWeights) -> Self {
        Self {
            e,
            p,
            o,
            l: weights.combine(e, p, o),
            weights,
            failed: false,
        }
    }

    /// Training or evaluation failed: `E`, `P` and `L` are `+inf`.
    pub fn failed(o: f64, weights: ObjectiveWeights) -> Self {
        Self {
            e: f64::INFINITY,
            p: f64::INFINITY,
            o,
            l: f64::INFINITY,
            weights,
            failed: true,
        }
    }

    /// Whether the stored `L` equals the recomputed weighted sum bit-exactly
    /// (failed records must carry `+inf`).
    pub fn is_consistent(&self) -> bool {
        if self.failed {
            self.l == f64::INFINITY
        } else {
            self.l.to_bits() == self.weights.combine(self.e, self.p, self.o).to_bits()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Training images with their (fixed) encoder features.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    images: Vec<Tensor>,
    features: Vec<Vec<Tensor>>,
}

impl TrainingSet {
    pub fn new(encoder: &Encoder, images: Vec<Tensor>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let features = images
            .iter()
            .map(|im| encoder.features(im))
            .collect::<Result<_>>()?;
        Ok(Self { images, features })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub decoder: Decoder,
    /// Mean reconstruction MSE over the training set after the last step.
    pub final_loss: f64,
}

/// Trains a freshly initialised decoder for `genome` on pixel MSE with WCT
/// off: batch size 1, Adam, `cfg.steps` steps over reshuffled epochs.
pub fn train_candidate(
    genome: Genome,
    encoder_channels: &[usize],
    train: &TrainingSet,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<TrainOutcome> {
    let mut decoder = Decoder::build(genome, encoder_channels, rng)?;
    let mut params = decoder.param_tensors();
    let mut opt = Adam::with_params(cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for step in 0..cfg.steps {
        let slot = step % train.len();
        if slot == 0 {
            order.shuffle(rng);
        }
        let idx = order[slot];
        let mut tape = Tape::new();
        let pvars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
        let fvars: Vec<Var> = train.features[idx]
            .iter()
            .map(|f| tape.constant(f.clone()))
            .collect();
        let target = tape.constant(train.images[idx].clone());
        let loss = decoder
            .forward_reconstruction(&mut tape, &pvars, &fvars)
            .and_then(|out| tape.mse_loss(out, target))
            .map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged { step },
                other => other,
            })?;
        let grads = tape.backward(loss)?;
        let grefs: Vec<Option<&Tensor>> = pvars.iter().map(|&v| grads.wrt(v)).collect();
        opt.step(&mut params, &grefs)?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { step });
        }
    }
    decoder.set_param_tensors(params)?;

    let net_loss = train
        .features
        .iter()
        .zip(&train.images)
        .map(|(f, im)| {
            let out = decoder.run_reconstruction(f)?;
            ops::mse_loss(&out, im)
        })
        .sum::<Result<f64>>()?
        / train.len() as f64;
    if !net_loss.is_finite() {
        return Err(Error::Diverged { step: cfg.steps });
    }
    Ok(TrainOutcome {
        decoder,
        final_loss: net_loss,
    })
}

/// Content/style pairs with cached encoder features.
#[derive(Clone, Debug)]
pub struct ValidationSet {
    pairs: Vec<(Tensor, Tensor)>,
    content_feats: Vec<Vec<Tensor>>,
    style_feats: Vec<Vec<Tensor>>,
}

impl ValidationSet {
    pub fn new(encoder: &Encoder, pairs: Vec<(Tensor, Tensor)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("validation set is empty".into()));
        }
        let dims = pairs[0].0.dims3()?;
        for (i, (c, s)) in pairs.iter().enumerate() {
            if c.dims3()? != dims || s.dims3()? != dims {
                return Err(Error::InvalidArgument(format!(
                    "validation pair {i} does not match size {dims:?}"
                )));
            }
            if c.data()
                .iter()
                .chain(s.data())
                .any(|v| !(0.0..=1.0).contains(v))
            {
                return Err(Error::InvalidArgument(format!(
                    "validation pair {i} has pixels outside [0, 1]"
                )));
            }
        }
        check_divisible(dims.1, dims.2)?;
        let content_feats = pairs
            .iter()
            .map(|(c, _)| encoder.features(c))
            .collect::<Result<_>>()?;
        let style_feats = pairs
            .iter()
            .map(|(_, s)| encoder.features(s))
            .collect::<Result<_>>()?;
        Ok(Self {
            pairs,
            content_feats,
            style_feats,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(Tensor, Tensor)] {
        &self.pairs
    }

    /// Stylized outputs of `net` for every pair, clamped to `[0, 1]`.
    pub fn stylize(&self, net: &StyleNet) -> Result<Vec<Tensor>> {
        self.content_feats
            .iter()
            .zip(&self.style_feats)
            .map(|(c, s)| Ok(net.forward_features(c, Some(s))?.clamp(0.0, 1.0)))
            .collect()
    }

    /// SHA-256 over every pair's pixels.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (c, s) in &self.pairs {
            h.update(crate::data::tensor_hash(c));
            h.update(crate::data::tensor_hash(s));
        }
        hex::encode(h.finalize())
    }
}

/// Frozen feature pyramid used for the perceptual term and the Fréchet
/// feature statistics.
#[derive(Clone, Debug)]
pub struct PerceptualExtractor {
    encoder: Encoder,
}

impl PerceptualExtractor {
    pub fn seeded(channels: &[usize], seed: u64) -> Result<Self> {
        Ok(Self {
            encoder: Encoder::seeded(channels, seed)?,
        })
    }

    pub fn from_encoder(encoder: Encoder) -> Self {
        Self { encoder }
    }

    /// `[Phi_1, ..., Phi_5]`.
    pub fn features(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        self.encoder.features(image)
    }
}

/// Supervisory oracle: a trained network and its cached stylized outputs.
#[derive(Clone, Debug)]
pub struct Oracle {
    pub net: StyleNet,
    outputs: Vec<Tensor>,
    hash: String,
}

impl Oracle {
    /// Runs `net` in stylization mode over the validation set once.
    pub fn new(mut net: StyleNet, val: &ValidationSet) -> Result<Self> {
        net.wct_enabled = true;
        let outputs = val.stylize(&net)?;
        let hash = Self::cache_key(&net, val)?;
        Ok(Self { net, outputs, hash })
    }

    /// Restores cached outputs; `hash` must match the net and the set.
    pub fn from_cache(
        mut net: StyleNet,
        val: &ValidationSet,
        outputs: Vec<Tensor>,
    ) -> Result<Self> {
        net.wct_enabled = true;
        if outputs.len() != val.len() {
            return Err(Error::InvalidArgument(format!(
                "oracle cache holds {} outputs for {} validation pairs",
                outputs.len(),
                val.len()
            )));
        }
        let hash = Self::cache_key(&net, val)?;
        Ok(Self { net, outputs, hash })
    }

    /// SHA-256 over the checkpoint bytes and the validation set hash.
    pub fn cache_key(net: &StyleNet, val: &ValidationSet) -> Result<String> {
        let mut buf = Vec::new();
        net.to_checkpoint().write_to(&mut buf)?;
        let mut h = Sha256::new();
        h.update(&buf);
        h.update(val.hash());
        Ok(hex::encode(h.finalize()))
    }

    pub fn outputs(&self) -> &[Tensor] {
        &self.outputs
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }
}

/// Genome of the handcrafted oracle: bottleneck WCT and a concat skip at
/// every stage, nothing else.
pub fn oracle_genome() -> Genome {
    let mut g = Genome::ZEROS.with_bit(0, true);
    for k in 0..crate::genome::NUM_STAGES {
        let base = 1 + crate::genome::BITS_PER_STAGE * k;
        g = g.with_bit(base + 4, true).with_bit(base + 5, true);
    }
    g
}

/// Mean over pairs of the normalised Frobenius distance.
pub fn reconstruction_error(outputs: &[Tensor], oracle: &[Tensor]) -> Result<f64> {
    if outputs.len() != oracle.len() || outputs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} candidate outputs vs {} oracle outputs",
            outputs.len(),
            oracle.len()
        )));
    }
    let total = outputs
        .iter()
        .zip(oracle)
        .map(|(a, b)| a.normalized_distance(b))
        .sum::<Result<f64>>()?;
    Ok(total / outputs.len() as f64)
}

/// Mean over pairs of the summed per-stage normalised feature distances.
/// `oracle_feats[i]` are the extractor features of the oracle's `i`-th
/// output.
pub fn perceptual_loss(
    outputs: &[Tensor],
    oracle_feats: &[Vec<Tensor>],
    extractor: &PerceptualExtractor,
) -> Result<f64> {
    if outputs.len() != oracle_feats.len() || outputs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} candidate outputs vs {} oracle feature sets",
            outputs.len(),
            oracle_feats.len()
        )));
    }
    let mut total = 0.0;
    for (out, of) in outputs.iter().zip(oracle_feats) {
        let cf = extractor.features(out)?;
        for (a, b) in cf.iter().zip(of) {
            total += a.normalized_distance(b)?;
        }
    }
    Ok(total / outputs.len() as f64)
}

/// Everything needed to train and score candidates. Shared read-only
/// between search workers.
#[derive(Clone, Debug)]
pub struct CandidateEvaluator {
    pub encoder: Arc<Encoder>,
    pub extractor: Arc<PerceptualExtractor>,
    pub train: Arc<TrainingSet>,
    pub val: Arc<ValidationSet>,
    pub oracle: Arc<Oracle>,
    oracle_feats: Arc<Vec<Vec<Tensor>>>,
    pub train_cfg: TrainConfig,
    pub weights: ObjectiveWeights,
}

impl CandidateEvaluator {
    pub fn new(
        encoder: Arc<Encoder>,
        extractor: Arc<PerceptualExtractor>,
        train: Arc<TrainingSet>,
        val: Arc<ValidationSet>,
        oracle: Arc<Oracle>,
        train_cfg: TrainConfig,
        weights: ObjectiveWeights,
    ) -> Result<Self> {
        weights.validate()?;
        let oracle_feats = oracle
            .outputs()
            .iter()
            .map(|o| extractor.features(o))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            encoder,
            extractor,
            train,
            val,
            oracle,
            oracle_feats: Arc::new(oracle_feats),
            train_cfg,
            weights,
        })
    }

    /// Same evaluator with different objective weights.
    pub fn with_weights(&self, weights: ObjectiveWeights) -> Result<Self> {
        weights.validate()?;
        Ok(Self {
            weights,
            ..self.clone()
        })
    }

    /// `(E, P)` of an already trained network (WCT switched on).
    pub fn score(&self, net: &StyleNet) -> Result<(f64, f64)> {
        let mut net = net.clone();
        net.wct_enabled = true;
        let outputs = self.val.stylize(&net)?;
        let e = reconstruction_error(&outputs, self.oracle.outputs())?;
        let p = perceptual_loss(&outputs, &self.oracle_feats, &self.extractor)?;
        Ok((e, p))
    }

    /// Trains the candidate and returns the trained network with its
    /// breakdown.
    pub fn train_and_score(
        &self,
        genome: Genome,
        seed: u64,
    ) -> Result<(StyleNet, ObjectiveBreakdown)> {
        let mut rng = seeded(seed);
        let trained = train_candidate(
            genome,
            self.encoder.channels(),
            &self.train,
            &self.train_cfg,
            &mut rng,
        )?;
        let net = StyleNet::new(self.encoder.clone(), trained.decoder, true);
        let (e, p) = self.score(&net)?;
        let b = ObjectiveBreakdown::new(e, p, genome.operator_fraction(), self.weights);
        if !b.l.is_finite() {
            return Err(Error::NonFinite("objective"));
        }
        Ok((net, b))
    }
}

impl Evaluator for CandidateEvaluator {
    fn evaluate(&self, genome: Genome, seed: u64) -> ObjectiveBreakdown {
        match self.train_and_score(genome, seed) {
            Ok((_, b)) => b,
            Err(_) => ObjectiveBreakdown::failed(genome.operator_fraction(), self.weights),
        }
    }

    fn weights(&self) -> ObjectiveWeights {
        self.weights
    }
}

/// Trains the oracle network with `steps` optimizer steps.
pub fn train_oracle(
    encoder: Arc<Encoder>,
    train: &TrainingSet,
    cfg: &TrainConfig,
    val: &ValidationSet,
    seed: u64,
) -> Result<(Oracle, f64)> {
    let mut rng = seeded(derive_seed(seed, 0x0AC1E));
    let trained = train_candidate(oracle_genome(), encoder.channels(), train, cfg, &mut rng)?;
    let net = StyleNet::new(encoder, trained.decoder, true);
    Ok((Oracle::new(net, val)?, trained.final_loss))
}

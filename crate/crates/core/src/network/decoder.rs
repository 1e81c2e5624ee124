use crate::genome::{DecodedGraph, Genome, StageChannels, StageOptions, NUM_STAGES};
use crate::rng::SeededRng;
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

use super::wct::wct;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvRef {
    weight: usize,
    bias: usize,
    padding: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct StageLayout {
    opts: StageOptions,
    main: ConvRef,
    extra_a: Option<ConvRef>,
    extra_b: Option<ConvRef>,
    /// 1x1 projection after a concat skip merge.
    merge: Option<ConvRef>,
}

/// Trainable decoder instantiated from a decoded genome.
///
/// Stage `s` (5 down to 1) runs, in order: 2x nearest upsample (stages
/// 4..=1), `conv3x3 + ReLU`, the optional extra `conv3x3 + ReLU` pair, the
/// optional skip merge with encoder stage `s`, optional instance norm and
/// an optional WCT site. A final `conv3x3` maps stage 1 to RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    genome: Genome,
    graph: DecodedGraph,
    plan: Vec<StageChannels>,
    encoder_channels: Vec<usize>,
    params: Vec<Param>,
    stages: Vec<StageLayout>,
    out: ConvRef,
}

/// Where activations come from at WCT sites during a stylization pass.
pub(crate) enum SiteMode<'a> {
    /// Reconstruction: WCT sites are pass-through.
    Off,
    /// Record the pre-transform activation at every site.
    Capture(&'a mut Vec<Tensor>),
    /// Apply WCT at every site against the given style activations.
    Apply(&'a [Tensor], f64),
}

impl Decoder {
    /// He-initialised decoder for `genome`. `encoder_channels[i]` is the
    /// output channel count of encoder stage `i + 1`.
    pub fn build(genome: Genome, encoder_channels: &[usize], rng: &mut SeededRng) -> Result<Self> {
        Self::layout(genome, encoder_channels, &mut |shape: &[usize]| {
            let fan_in: usize = shape[1..].iter().product();
            Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
        })
    }

    /// Rebuilds a decoder from named parameters; every expected parameter
    /// must be present with the right shape.
    pub fn from_params(
        genome: Genome,
        encoder_channels: &[usize],
        named: &[(String, Tensor)],
    ) -> Result<Self> {
        let mut dec = Self::layout(genome, encoder_channels, &mut |shape: &[usize]| {
            Tensor::zeros(shape)
        })?;
        for p in &mut dec.params {
            let (_, t) = named
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(dec)
    }

    fn layout(
        genome: Genome,
        encoder_channels: &[usize],
        init: &mut dyn FnMut(&[usize]) -> Tensor,
    ) -> Result<Self> {
        let graph = genome.decode();
        let plan = graph.channel_plan(encoder_channels)?;
        let mut params = Vec::new();
        let mut conv = |name: String, c_in: usize, c_out: usize, k: usize| {
            let weight = params.len();
            params.push(Param {
                name: format!("{name}.weight"),
                value: init(&[c_out, c_in, k, k]),
            });
            params.push(Param {
                name: format!("{name}.bias"),
                value: Tensor::zeros(&[c_out]),
            });
            ConvRef {
                weight,
                bias: weight + 1,
                padding: (k - 1) / 2,
            }
        };

        let mut stages = Vec::with_capacity(NUM_STAGES);
        for (opts, ch) in graph.stages.iter().zip(&plan) {
            let prefix = format!("decoder.stage{}", opts.stage);
            let main = conv(format!("{prefix}.conv"), ch.input, ch.output, 3);
            let extra_a = opts
                .extra_conv_a
                .then(|| conv(format!("{prefix}.extra_a"), ch.output, ch.output, 3));
            let extra_b = opts
                .extra_conv_b
                .then(|| conv(format!("{prefix}.extra_b"), ch.output, ch.output, 3));
            let merge = opts
                .merges_by_concat()
                .then(|| conv(format!("{prefix}.merge"), 2 * ch.output, ch.output, 1));
            stages.push(StageLayout {
                opts: *opts,
                main,
                extra_a,
                extra_b,
                merge,
            });
        }
        let out = conv("decoder.out".to_string(), plan[NUM_STAGES - 1].output, 3, 3);
        Ok(Self {
            genome,
            graph,
            plan,
            encoder_channels: encoder_channels.to_vec(),
            params,
            stages,
            out,
        })
    }

    pub fn genome(&self) -> Genome {
        self.genome
    }

    pub fn graph(&self) -> &DecodedGraph {
        &self.graph
    }

    pub fn channel_plan(&self) -> &[StageChannels] {
        &self.plan
    }

    pub fn encoder_channels(&self) -> &[usize] {
        &self.encoder_channels
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn set_param_tensors(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::InvalidArgument("parameter count mismatch".into()));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::shape("set_params", p.name.clone()));
            }
            p.value = v;
        }
        Ok(())
    }

    /// Registers the parameters on a tape.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), requires_grad))
            .collect()
    }

    /// Forward pass on `tape`. `feats` are the five encoder features of the
    /// content image (stage 1 first).
    pub(crate) fn forward_on(
        &self,
        tape: &mut Tape,
        params: &[Var],
        feats: &[Var],
        mut sites: SiteMode<'_>,
    ) -> Result<Var> {
        if feats.len() != NUM_STAGES {
            return Err(Error::shape("decoder", "expected five encoder features"));
        }
        let mut site = 0usize;
        let mut wct_site = |tape: &mut Tape, x: Var, sites: &mut SiteMode<'_>| -> Result<Var> {
            let out = match sites {
                SiteMode::Off => x,
                SiteMode::Capture(store) => {
                    store.push(tape.value(x).clone());
                    x
                }
                SiteMode::Apply(styles, floor) => {
                    let style = styles.get(site).ok_or_else(|| {
                        Error::InvalidArgument(format!("no style activation for WCT site {site}"))
                    })?;
                    let y = wct(tape.value(x), style, *floor)?;
                    tape.constant(y)
                }
            };
            site += 1;
            Ok(out)
        };
        let conv = |tape: &mut Tape, x: Var, c: ConvRef| {
            tape.conv2d(x, params[c.weight], params[c.bias], c.padding)
        };

        let mut x = feats[NUM_STAGES - 1];
        if self.graph.bottleneck_wct {
            x = wct_site(tape, x, &mut sites)?;
        }
        for st in &self.stages {
            if st.opts.upsamples() {
                x = tape.upsample_nearest(x, 2)?;
            }
            x = conv(tape, x, st.main)?;
            x = tape.relu(x)?;
            for extra in [st.extra_a, st.extra_b].into_iter().flatten() {
                x = conv(tape, x, extra)?;
                x = tape.relu(x)?;
            }
            if st.opts.skip {
                let enc = feats[st.opts.stage - 1];
                x = match st.merge {
                    Some(m) => {
                        let cat = tape.concat(x, enc)?;
                        conv(tape, cat, m)?
                    }
                    None => tape.add(x, enc)?,
                };
            }
            if st.opts.instance_norm {
                x = tape.instance_norm(x, INSTANCE_NORM_EPS)?;
            }
            if st.opts.wct {
                x = wct_site(tape, x, &mut sites)?;
            }
        }
        conv(tape, x, self.out)
    }

    /// Reconstruction-mode forward on a tape (WCT sites pass through).
    /// `params` come from [`Decoder::bind`].
    pub fn forward_reconstruction(
        &self,
        tape: &mut Tape,
        params: &[Var],
        feats: &[Var],
    ) -> Result<Var> {
        self.forward_on(tape, params, feats, SiteMode::Off)
    }

    /// Reconstruction-mode inference from encoder features.
    pub fn run_reconstruction(&self, feats: &[Tensor]) -> Result<Tensor> {
        self.run(feats, SiteMode::Off)
    }

    /// Inference without gradients.
    pub(crate) fn run(&self, feats: &[Tensor], sites: SiteMode<'_>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let fvars: Vec<Var> = feats.iter().map(|f| tape.constant(f.clone())).collect();
        let out = self.forward_on(&mut tape, &params, &fvars, sites)?;
        Ok(tape.value(out).clone())
    }
}

//! The 31-bit architecture code.
//!
//! Bit layout (bit 0 is the leftmost character of the string form):
//!
//! ```text
//! bit 0            bottleneck WCT
//! bits 1..=6       decoder stage 5 (deepest)
//! bits 7..=12      decoder stage 4
//! bits 13..=18     decoder stage 3
//! bits 19..=24     decoder stage 2
//! bits 25..=30     decoder stage 1 (full resolution)
//! ```
//!
//! Within a stage the six bits are, in order: extra conv A, extra conv B,
//! instance norm, WCT, skip connection, skip-by-concat. The concat bit is
//! inert while the skip bit is off.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const GENOME_BITS: usize = 31;
pub const NUM_STAGES: usize = 5;
pub const BITS_PER_STAGE: usize = 6;

/// Default per-bit mutation probability (one expected flip).
pub const DEFAULT_FLIP_PROB: f64 = 1.0 / GENOME_BITS as f64;

/// 31-bit architecture descriptor, stored in the low bits of a `u32`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genome(u32);

const MASK: u32 = (1 << GENOME_BITS) - 1;

impl Genome {
    pub const ZEROS: Genome = Genome(0);
    pub const ONES: Genome = Genome(MASK);

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        if bits.len() != GENOME_BITS {
            return Err(Error::Genome(format!(
                "expected {GENOME_BITS} bits, got {}",
                bits.len()
            )));
        }
        Ok(Self(
            bits.iter()
                .enumerate()
                .fold(0, |acc, (i, &b)| acc | (u32::from(b) << i)),
        ))
    }

    /// Parses a code as printed in the literature, which may carry one
    /// extra leading `0` (32 characters for a 31-bit space). The leading
    /// pad is dropped; anything else must be a plain 31-character code.
    pub fn parse_published(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.len() {
            32 if s.starts_with('0') => s[1..].parse(),
            _ => s.parse(),
        }
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < GENOME_BITS, "bit index {i} out of range");
        (self.0 >> i) & 1 == 1
    }

    pub fn with_bit(self, i: usize, on: bool) -> Self {
        assert!(i < GENOME_BITS, "bit index {i} out of range");
        if on {
            Self(self.0 | (1 << i))
        } else {
            Self(self.0 & !(1 << i))
        }
    }

    pub fn flip(self, i: usize) -> Self {
        assert!(i < GENOME_BITS, "bit index {i} out of range");
        Self(self.0 ^ (1 << i))
    }

    pub fn complement(self) -> Self {
        Self(!self.0 & MASK)
    }

    pub fn popcount(&self) -> u32 {
        self.0.count_ones()
    }

    /// Fraction of the 31 operator options that are enabled.
    pub fn operator_fraction(&self) -> f64 {
        f64::from(self.popcount()) / GENOME_BITS as f64
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self(rng.random::<u32>() & MASK)
    }

    /// Flips each bit independently with probability `p_flip`. When no bit
    /// flips, exactly one uniformly chosen bit is flipped instead, so the
    /// child always differs from the parent.
    pub fn mutate<R: Rng + ?Sized>(&self, rng: &mut R, p_flip: f64) -> Result<Self> {
        if !(p_flip > 0.0 && p_flip <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "flip probability must be in (0, 1], got {p_flip}"
            )));
        }
        let mut child = *self;
        for i in 0..GENOME_BITS {
            if rng.random_bool(p_flip) {
                child = child.flip(i);
            }
        }
        if child == *self {
            child = child.flip(rng.random_range(0..GENOME_BITS));
        }
        Ok(child)
    }

    pub fn hamming(&self, other: &Genome) -> u32 {
        (self.0 ^ other.0).count_ones()
    }

    pub fn decode(&self) -> DecodedGraph {
        let stages = (0..NUM_STAGES)
            .map(|k| {
                let base = 1 + BITS_PER_STAGE * k;
                StageOptions {
                    stage: NUM_STAGES - k,
                    extra_conv_a: self.bit(base),
                    extra_conv_b: self.bit(base + 1),
                    instance_norm: self.bit(base + 2),
                    wct: self.bit(base + 3),
                    skip: self.bit(base + 4),
                    skip_concat: self.bit(base + 5),
                }
            })
            .collect();
        DecodedGraph {
            bottleneck_wct: self.bit(0),
            stages,
        }
    }
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..GENOME_BITS {
            f.write_str(if self.bit(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Genome({self})")
    }
}

impl FromStr for Genome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() != GENOME_BITS {
            return Err(Error::Genome(format!(
                "expected {GENOME_BITS} characters, got {} in {s:?}",
                s.len()
            )));
        }
        let mut bits = 0u32;
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => bits |= 1 << i,
                other => {
                    return Err(Error::Genome(format!(
                        "invalid character {other:?} at position {i}"
                    )))
                }
            }
        }
        Ok(Self(bits))
    }
}

impl Serialize for Genome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Genome {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Option flags of one decoder stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageOptions {
    /// Encoder scale this stage reconstructs, 5 (deepest) down to 1.
    pub stage: usize,
    pub extra_conv_a: bool,
    pub extra_conv_b: bool,
    pub instance_norm: bool,
    pub wct: bool,
    pub skip: bool,
    pub skip_concat: bool,
}

impl StageOptions {
    /// Whether the skip merge concatenates (true) or adds (false). Only
    /// meaningful when `skip` is set.
    pub fn merges_by_concat(&self) -> bool {
        self.skip && self.skip_concat
    }

    pub fn enabled_flags(&self) -> usize {
        [
            self.extra_conv_a,
            self.extra_conv_b,
            self.instance_norm,
            self.wct,
            self.skip,
            self.skip_concat,
        ]
        .iter()
        .filter(|&&b| b)
        .count()
    }

    pub fn upsamples(&self) -> bool {
        self.stage < NUM_STAGES
    }
}

/// Operator graph decoded from a genome; stages are ordered deepest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedGraph {
    pub bottleneck_wct: bool,
    pub stages: Vec<StageOptions>,
}

/// Input and output channels of one decoder stage's main convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageChannels {
    pub stage: usize,
    pub input: usize,
    pub output: usize,
}

impl DecodedGraph {
    pub fn enabled_flags(&self) -> usize {
        usize::from(self.bottleneck_wct)
            + self
                .stages
                .iter()
                .map(StageOptions::enabled_flags)
                .sum::<usize>()
    }

    pub fn has_wct(&self) -> bool {
        self.bottleneck_wct || self.stages.iter().any(|s| s.wct)
    }

    /// Derives the decoder channel plan from the encoder's per-stage output
    /// channels (`encoder[0]` is stage 1). Stage `s` maps the previous
    /// stage's channels to `encoder[s - 1]`; stage 5 starts from the
    /// bottleneck features.
    pub fn channel_plan(&self, encoder: &[usize]) -> Result<Vec<StageChannels>> {
        if self.stages.len() != NUM_STAGES {
            return Err(Error::ChannelPlan {
                stage: self.stages.len(),
                msg: format!("expected {NUM_STAGES} stages"),
            });
        }
        if encoder.len() != NUM_STAGES {
            return Err(Error::ChannelPlan {
                stage: encoder.len().min(NUM_STAGES),
                msg: format!(
                    "encoder plan has {} stages, expected {NUM_STAGES}",
                    encoder.len()
                ),
            });
        }
        let mut input = encoder[NUM_STAGES - 1];
        let mut plan = Vec::with_capacity(NUM_STAGES);
        for opts in &self.stages {
            let output = encoder[opts.stage - 1];
            if output == 0 || input == 0 {
                return Err(Error::ChannelPlan {
                    stage: opts.stage,
                    msg: "zero channels".into(),
                });
            }
            plan.push(StageChannels {
                stage: opts.stage,
                input,
                output,
            });
            input = output;
        }
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    const PUBLISHED_7OPT: &str = "01010000000100000000000000001111";

    #[test]
    fn string_round_trip() {
        let s = "1010000000100000000000000001111";
        let g: Genome = s.parse().unwrap();
        assert_eq!(g.to_string(), s);
        assert!(g.bit(0));
        assert!(!g.bit(1));
        assert!("0101".parse::<Genome>().is_err());
        assert!("x".repeat(31).parse::<Genome>().is_err());
    }

    #[test]
    fn published_code() {
        let g = Genome::parse_published(PUBLISHED_7OPT).unwrap();
        assert_eq!(g.popcount(), 7);
        assert_eq!(g.operator_fraction(), 7.0 / 31.0);
        assert_eq!(g.decode().enabled_flags(), 7);
        assert!(Genome::parse_published(&"1".repeat(32)).is_err());
    }

    #[test]
    fn zero_and_full_decode() {
        let z = Genome::ZEROS.decode();
        assert!(!z.bottleneck_wct);
        assert_eq!(z.stages.len(), 5);
        assert_eq!(
            z.stages.iter().map(|s| s.stage).collect::<Vec<_>>(),
            vec![5, 4, 3, 2, 1]
        );
        assert_eq!(z.enabled_flags(), 0);
        assert!(!z.stages[0].upsamples());
        assert!(z.stages[1..].iter().all(|s| s.upsamples()));

        let o = Genome::ONES.decode();
        assert!(o.bottleneck_wct);
        assert!(o.stages.iter().all(|s| s.extra_conv_a
            && s.extra_conv_b
            && s.instance_norm
            && s.wct
            && s.merges_by_concat()));
        assert_eq!(o.enabled_flags(), 31);
    }

    #[test]
    fn fractions() {
        assert_eq!(Genome::ZEROS.operator_fraction(), 0.0);
        assert_eq!(Genome::ONES.operator_fraction(), 1.0);
    }

    #[test]
    fn mutation_full_flip_is_complement() {
        let mut rng = seeded(3);
        for _ in 0..50 {
            let g = Genome::random(&mut rng);
            let c = g.mutate(&mut rng, 1.0).unwrap();
            assert_eq!(c, g.complement());
            assert_eq!(c.popcount(), 31 - g.popcount());
            assert!((c.operator_fraction() - (1.0 - g.operator_fraction())).abs() < 1e-15);
        }
    }

    #[test]
    fn mutation_rejects_bad_probability() {
        let mut rng = seeded(0);
        assert!(Genome::ZEROS.mutate(&mut rng, 0.0).is_err());
        assert!(Genome::ZEROS.mutate(&mut rng, 1.5).is_err());
    }

    #[test]
    fn child_always_differs() {
        for seed in 0..10_000 {
            let mut rng = seeded(seed);
            let g = Genome::random(&mut rng);
            let c = g.mutate(&mut rng, DEFAULT_FLIP_PROB).unwrap();
            assert_ne!(c, g, "seed {seed}");
        }
    }

    #[test]
    fn hamming_examples() {
        let mut rng = seeded(9);
        assert_eq!(Genome::ZEROS.hamming(&Genome::ONES), 31);
        for _ in 0..200 {
            let a = Genome::random(&mut rng);
            let b = Genome::random(&mut rng);
            assert_eq!(a.hamming(&a), 0);
            assert_eq!(a.hamming(&b), b.hamming(&a));
            assert!(a.hamming(&b) <= 31);
        }
    }

    #[test]
    fn default_channel_plan() {
        let plan = Genome::ZEROS
            .decode()
            .channel_plan(&[8, 16, 32, 64, 128])
            .unwrap();
        let pairs: Vec<_> = plan.iter().map(|p| (p.stage, p.input, p.output)).collect();
        assert_eq!(
            pairs,
            vec![
                (5, 128, 128),
                (4, 128, 64),
                (3, 64, 32),
                (2, 32, 16),
                (1, 16, 8)
            ]
        );
        let err = Genome::ZEROS
            .decode()
            .channel_plan(&[8, 16, 0, 64, 128])
            .unwrap_err();
        assert!(matches!(err, Error::ChannelPlan { stage: 3, .. }));
        assert!(Genome::ZEROS.decode().channel_plan(&[8, 16]).is_err());
    }
}

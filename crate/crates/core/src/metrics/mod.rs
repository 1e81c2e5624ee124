//! Image quality and search convergence metrics.
//!
//! The Fréchet distance here is computed on spatially averaged stage-4
//! features of the seeded surrogate extractor, so its values are only
//! comparable with each other, never with Inception-based FID numbers.

pub mod plot;

use crate::genome::Genome;
use crate::linalg::{covariance, sym_eig, sym_pow, SymMatrix};
use crate::objective::{ObjectiveWeights, PerceptualExtractor};
use crate::search::{best_of, SearchRecord};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Stage whose features feed the Fréchet statistics (1-based).
pub const FRECHET_STAGE: usize = 4;

/// Multiplier applied to the raw total variation.
pub const TV_SCALE: f64 = 100.0;

/// Anisotropic total variation: the mean absolute horizontal forward
/// difference plus the mean absolute vertical one, over all channels,
/// times [`TV_SCALE`]. A direction without any neighbour pair contributes
/// nothing; an image without any pair is an error.
pub fn tv_score(image: &Tensor) -> Result<f64> {
    let (c, h, w) = image.dims3()?;
    let d = image.data();
    let (nx, ny) = (c * h * w.saturating_sub(1), c * h.saturating_sub(1) * w);
    if nx + ny == 0 {
        return Err(Error::InvalidArgument(format!(
            "tv_score needs at least two pixels along one axis, got {h}x{w}"
        )));
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let i = (ch * h + y) * w + x;
                if x + 1 < w {
                    sx += (d[i + 1] - d[i]).abs();
                }
                if y + 1 < h {
                    sy += (d[i + w] - d[i]).abs();
                }
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(TV_SCALE * (mean(sx, nx) + mean(sy, ny)))
}

/// Gaussian fit to a set of feature vectors.
#[derive(Clone, Debug)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
    pub count: usize,
}

impl GaussianStats {
    /// Fits rows of `vectors` (all the same length) with population
    /// covariance.
    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "feature statistics need at least 2 samples, got {}",
                vectors.len()
            )));
        }
        let d = vectors[0].len();
        if d == 0 || vectors.iter().any(|v| v.len() != d) {
            return Err(Error::shape(
                "feature_stats",
                "ragged or empty feature vectors",
            ));
        }
        let n = vectors.len();
        let mut data = vec![0.0; d * n];
        for (j, v) in vectors.iter().enumerate() {
            for (i, x) in v.iter().enumerate() {
                data[i * n + j] = *x;
            }
        }
        let (cov, mean) = covariance(&Tensor::new(vec![d, n], data)?)?;
        Ok(Self {
            mean,
            cov,
            count: n,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Per-channel spatial mean of the extractor's stage-4 features.
pub fn feature_vector(image: &Tensor, extractor: &PerceptualExtractor) -> Result<Vec<f64>> {
    let feats = extractor.features(image)?;
    let f = &feats[FRECHET_STAGE - 1];
    let (c, h, w) = f.dims3()?;
    Ok((0..c)
        .map(|ch| f.data()[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / (h * w) as f64)
        .collect())
}

pub fn feature_stats(images: &[Tensor], extractor: &PerceptualExtractor) -> Result<GaussianStats> {
    if images.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "feature statistics need at least 2 images, got {}",
            images.len()
        )));
    }
    let vectors = images
        .iter()
        .map(|im| feature_vector(im, extractor))
        .collect::<Result<Vec<_>>>()?;
    GaussianStats::from_vectors(&vectors)
}

/// Squared Fréchet distance between two Gaussians,
/// `|mu_a - mu_b|^2 + tr(S_a) + tr(S_b) - 2 tr((S_a^1/2 S_b S_a^1/2)^1/2)`.
/// Small negative totals from rounding are clamped to zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(
            "frechet_distance",
            format!("dimension {} vs {}", a.dim(), b.dim()),
        ));
    }
    let n = a.dim();
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    let sa = sym_pow(&a.cov, 0.5, 0.0)?;
    let inner = sa.as_slice().to_vec();
    let left = crate::linalg::matmul(n, &inner, b.cov.as_slice());
    let m = SymMatrix::symmetrize(n, crate::linalg::matmul(n, &left, &inner))?;
    let cross: f64 = sym_eig(&m)?.values.iter().map(|l| l.max(0.0).sqrt()).sum();
    let d2 = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    Ok(d2.max(0.0))
}

/// Hamming distance of every history record to `reference`.
pub fn hamming_trajectory(history: &[SearchRecord], reference: Genome) -> Vec<u32> {
    history
        .iter()
        .map(|r| r.genome.hamming(&reference))
        .collect()
}

/// Hamming trajectory against the history's own best genome.
pub fn hamming_to_best(history: &[SearchRecord]) -> Vec<u32> {
    match best_of(history) {
        Some(b) => hamming_trajectory(history, b.genome),
        None => Vec::new(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub index: usize,
    pub e: f64,
    pub p: f64,
    pub o: f64,
    pub l: f64,
    pub best_so_far: f64,
}

pub fn objective_trajectories(history: &[SearchRecord]) -> Vec<TrajectoryRow> {
    let mut best = f64::INFINITY;
    history
        .iter()
        .enumerate()
        .map(|(index, r)| {
            let b = &r.breakdown;
            best = best.min(b.l);
            TrajectoryRow {
                index,
                e: b.e,
                p: b.p,
                o: b.o,
                l: b.l,
                best_so_far: best,
            }
        })
        .collect()
}

/// `inf` for infinities, otherwise 17 significant digits.
pub fn csv_float(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.16e}")
    }
}

pub fn trajectories_csv(rows: &[TrajectoryRow]) -> String {
    let mut s = String::from("index,E,P,O,L,best_L\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.index,
            csv_float(r.e),
            csv_float(r.p),
            csv_float(r.o),
            csv_float(r.l),
            csv_float(r.best_so_far)
        ));
    }
    s
}

pub fn hamming_csv(history: &[SearchRecord], distances: &[u32]) -> String {
    let mut s = String::from("index,genome,hamming\n");
    for (r, d) in history.iter().zip(distances) {
        s.push_str(&format!("{},{},{}\n", r.index, r.genome, d));
    }
    s
}

/// Checks that the best-so-far series never increases and that `L`
/// recomputed from the `E`, `P`, `O` columns with `weights` matches
/// bit-for-bit.
pub fn self_check(
    rows: &[TrajectoryRow],
    history: &[SearchRecord],
    weights: ObjectiveWeights,
) -> std::result::Result<(), String> {
    for w in rows.windows(2) {
        if w[1].best_so_far > w[0].best_so_far {
            return Err(format!("best-so-far L increases at index {}", w[1].index));
        }
    }
    for (r, rec) in rows.iter().zip(history) {
        let expected = if rec.breakdown.failed {
            f64::INFINITY
        } else {
            weights.combine(r.e, r.p, r.o)
        };
        if expected.to_bits() != r.l.to_bits() {
            return Err(format!(
                "L at index {} is {} but the weighted sum is {}",
                r.index,
                csv_float(r.l),
                csv_float(expected)
            ));
        }
    }
    Ok(())
}

pub fn mean_u32(values: &[u32]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().map(|&v| f64::from(v)).sum::<f64>() / values.len() as f64
}

/// One row of the per-method comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodMetrics {
    pub method: String,
    pub best_genome: Genome,
    pub best_l: f64,
    /// Fréchet distance of the method's outputs to the style images.
    pub fid_style: f64,
    /// Fréchet distance of the method's outputs to the oracle's outputs.
    pub fid_oracle: f64,
    pub tv: f64,
}

pub fn metrics_csv(rows: &[MethodMetrics]) -> String {
    let mut s = String::from(
        "# Frechet values use surrogate stage-4 features; TV is x100 anisotropic. Compare within this table only.\nmethod,best_genome,best_L,fid_style,fid_oracle,tv\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method,
            r.best_genome,
            csv_float(r.best_l),
            csv_float(r.fid_style),
            csv_float(r.fid_oracle),
            csv_float(r.tv)
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_examples() {
        assert_eq!(tv_score(&Tensor::full(&[3, 4, 5], 0.7)).unwrap(), 0.0);
        let edge = Tensor::new(vec![1, 1, 2], vec![0.0, 1.0]).unwrap();
        assert!((tv_score(&edge).unwrap() - 100.0).abs() < 1e-12);
        assert!(tv_score(&Tensor::zeros(&[3, 1, 1])).is_err());
        // two horizontal pairs (|1|, |1|) and two vertical pairs (|2|, |2|)
        let sq = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!((tv_score(&sq).unwrap() - 300.0).abs() < 1e-12);
    }

    #[test]
    fn frechet_one_dimensional_closed_form() {
        let a = GaussianStats {
            mean: vec![0.0],
            cov: SymMatrix::diag(&[1.0]),
            count: 2,
        };
        let b = GaussianStats {
            mean: vec![1.0],
            cov: SymMatrix::diag(&[4.0]),
            count: 2,
        };
        assert!((frechet_distance(&a, &b).unwrap() - 2.0).abs() < 1e-10);
        assert!(frechet_distance(&a, &a).unwrap() < 1e-12);
    }

    #[test]
    fn stats_need_two_samples() {
        assert!(GaussianStats::from_vectors(&[vec![1.0]]).is_err());
        let s = GaussianStats::from_vectors(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(s.cov.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trajectory_running_min_and_csv() {
        let w = ObjectiveWeights::default();
        let hist: Vec<SearchRecord> = [0.5, 0.3, f64::INFINITY, 0.4]
            .iter()
            .enumerate()
            .map(|(i, &e)| SearchRecord {
                index: i,
                genome: Genome::ZEROS,
                gen: 0,
                worker: 0,
                seed: 0,
                breakdown: if e.is_finite() {
                    crate::objective::ObjectiveBreakdown::new(e, 0.1, 0.0, w)
                } else {
                    crate::objective::ObjectiveBreakdown::failed(0.0, w)
                },
                seconds: 0.0,
            })
            .collect();
        let rows = objective_trajectories(&hist);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[3].best_so_far, rows[1].l);
        assert!(self_check(&rows, &hist, w).is_ok());
        let csv = trajectories_csv(&rows);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().nth(3).unwrap().contains(",inf,"));
        let mut bad = rows.clone();
        bad[0].l = f64::from_bits(bad[0].l.to_bits() + 1);
        assert!(self_check(&bad, &hist, w).is_err());
        assert!(hamming_to_best(&hist).contains(&0));
    }
}

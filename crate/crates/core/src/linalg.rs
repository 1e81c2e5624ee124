//! Symmetric-matrix kernels: covariance, cyclic Jacobi eigendecomposition
//! and matrix powers `A^p` through the eigenbasis.

use crate::tensor::Tensor;
use crate::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const JACOBI_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Default eigenvalue floor applied before negative powers.
pub const DEFAULT_EIG_FLOOR: f64 = 1e-8;

/// Dense row-major square matrix that is symmetric by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Fails when any mirrored pair differs by `1e-12` or more.
    // the negated comparison also rejects NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::shape(
                "SymMatrix",
                format!("{n}x{n} needs {} entries, got {}", n * n, data.len()),
            ));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let diff = (data[i * n + j] - data[j * n + i]).abs();
                if !(diff < SYMMETRY_TOL) {
                    return Err(Error::NotSymmetric { i, j, diff });
                }
            }
        }
        Ok(Self { n, data })
    }

    /// Builds `(B + B^T) / 2` from an arbitrary square matrix.
    pub fn symmetrize(n: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::shape("SymMatrix", "not square"));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let m = 0.5 * (data[i * n + j] + data[j * n + i]);
                data[i * n + j] = m;
                data[j * n + i] = m;
            }
        }
        Ok(Self { n, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn off_diagonal_norm(&self) -> f64 {
        off_norm(self.n, &self.data)
    }

    /// Plain dense product `self * other` (result not necessarily symmetric).
    pub fn matmul(&self, other: &SymMatrix) -> Vec<f64> {
        matmul(self.n, &self.data, &other.data)
    }

    /// `self * v` for a vector of matching length.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.data[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

pub(crate) fn matmul(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * n..(k + 1) * n];
            for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

fn off_norm(n: usize, a: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Channel covariance of a `[C, N]` feature matrix with population
/// normalisation `1/N`. Returns the covariance and the channel means.
pub fn covariance(features: &Tensor) -> Result<(SymMatrix, Vec<f64>)> {
    let [c, n] = features.shape()[..] else {
        return Err(Error::shape(
            "covariance",
            format!("expected [C, N], got {:?}", features.shape()),
        ));
    };
    if n == 0 {
        return Err(Error::InvalidArgument(
            "covariance needs at least one sample".into(),
        ));
    }
    let f = features.data();
    let mean: Vec<f64> = (0..c)
        .map(|i| f[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64)
        .collect();
    let centered: Vec<f64> = (0..c)
        .flat_map(|i| {
            let m = mean[i];
            f[i * n..(i + 1) * n].iter().map(move |v| v - m)
        })
        .collect();
    let mut cov = vec![0.0; c * c];
    for i in 0..c {
        let ri = &centered[i * n..(i + 1) * n];
        for j in i..c {
            let rj = &centered[j * n..(j + 1) * n];
            let s = ri.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            cov[i * c + j] = s;
            cov[j * c + i] = s;
        }
    }
    Ok((SymMatrix { n: c, data: cov }, mean))
}

/// Eigendecomposition `A = V diag(values) V^T`.
#[derive(Clone, Debug)]
pub struct SymEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Row-major `n x n`; column `j` is the eigenvector of `values[j]`.
    pub vectors: Vec<f64>,
    /// Off-diagonal Frobenius norm before the first sweep and after each one.
    pub off_norms: Vec<f64>,
}

impl SymEigen {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Rebuilds `V diag(f(values)) V^T`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.dim();
        let fv: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let v = &self.vectors;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let s: f64 = (0..n).map(|k| v[i * n + k] * fv[k] * v[j * n + k]).sum();
                out[i * n + j] = s;
                out[j * n + i] = s;
            }
        }
        SymMatrix { n, data: out }
    }
}

/// Cyclic Jacobi eigensolver. Converges when the off-diagonal norm drops
/// below `1e-12 * ||A||_F`; gives up after 100 sweeps.
pub fn sym_eig(a: &SymMatrix) -> Result<SymEigen> {
    let n = a.n;
    let mut m = a.data.clone();
    let mut v = SymMatrix::identity(n).data;
    let scale = a.frobenius();
    let threshold = JACOBI_TOL * scale;
    let mut off = off_norm(n, &m);
    let mut off_norms = vec![off];
    let mut sweeps = 0;

    while off > threshold {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps,
                residual: off / scale.max(f64::MIN_POSITIVE),
            });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(n, &mut m, &mut v, p, q);
            }
        }
        sweeps += 1;
        off = off_norm(n, &m);
        off_norms.push(off);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + new_col] = v[row * n + old_col];
        }
    }
    Ok(SymEigen {
        values,
        vectors,
        off_norms,
    })
}

/// One Jacobi rotation zeroing `m[p][q]`, accumulated into `v`.
fn rotate(n: usize, m: &mut [f64], v: &mut [f64], p: usize, q: usize) {
    let apq = m[p * n + q];
    if apq == 0.0 {
        return;
    }
    let app = m[p * n + p];
    let aqq = m[q * n + q];
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    for k in 0..n {
        let mkp = m[k * n + p];
        let mkq = m[k * n + q];
        m[k * n + p] = c * mkp - s * mkq;
        m[k * n + q] = s * mkp + c * mkq;
    }
    for k in 0..n {
        let mpk = m[p * n + k];
        let mqk = m[q * n + k];
        m[p * n + k] = c * mpk - s * mqk;
        m[q * n + k] = s * mpk + c * mqk;
    }
    m[p * n + q] = 0.0;
    m[q * n + p] = 0.0;

    for k in 0..n {
        let vkp = v[k * n + p];
        let vkq = v[k * n + q];
        v[k * n + p] = c * vkp - s * vkq;
        v[k * n + q] = s * vkp + c * vkq;
    }
}

/// `V diag(max(lambda, eig_floor)^p) V^T`.
///
/// Eigenvalues below `eig_floor` are clamped before powering, so negative
/// powers require a strictly positive floor.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn sym_pow(a: &SymMatrix, p: f64, eig_floor: f64) -> Result<SymMatrix> {
    if p < 0.0 && !(eig_floor > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "negative power {p} needs a positive eigenvalue floor, got {eig_floor}"
        )));
    }
    let eig = sym_eig(a)?;
    Ok(eig.reconstruct_with(|l| {
        let l = l.max(eig_floor);
        if p == 1.0 {
            l
        } else {
            l.powf(p)
        }
    }))
}

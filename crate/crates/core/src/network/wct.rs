use crate::linalg::{covariance, sym_pow, SymMatrix};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Whitening and coloring transform.
///
/// Content features are centred and whitened with `Σc^{-1/2}`, then colored
/// with `Σs^{1/2}` and shifted by the style mean. Both feature maps are
/// `[C, H, W]` with equal `C`; the output keeps the content's spatial size.
/// Eigenvalues of `Σc` below `eig_floor` are clamped before inversion.
pub fn wct(content: &Tensor, style: &Tensor, eig_floor: f64) -> Result<Tensor> {
    let (c, h, w) = content.dims3()?;
    let (cs, hs, ws) = style.dims3()?;
    if c != cs {
        return Err(Error::shape(
            "wct",
            format!("channel mismatch: content has {c}, style has {cs}"),
        ));
    }
    let fc = content.clone().reshape(vec![c, h * w])?;
    let fs = style.clone().reshape(vec![c, hs * ws])?;
    let (cov_c, mu_c) = covariance(&fc)?;
    let (cov_s, mu_s) = covariance(&fs)?;
    let whiten = sym_pow(&cov_c, -0.5, eig_floor)?;
    let color = sym_pow(&cov_s, 0.5, 0.0)?;
    let transform = color.matmul(&whiten);
    apply_affine(&transform, &fc, &mu_c, &mu_s)?.reshape(vec![c, h, w])
}

/// `T (f - mu_in) + mu_out` column by column on a `[C, N]` matrix.
fn apply_affine(t: &[f64], f: &Tensor, mu_in: &[f64], mu_out: &[f64]) -> Result<Tensor> {
    let [c, n] = f.shape()[..] else {
        unreachable!("reshaped above")
    };
    let x = f.data();
    let mut out = vec![0.0; c * n];
    for i in 0..c {
        let row = &mut out[i * n..(i + 1) * n];
        row.fill(mu_out[i]);
        for k in 0..c {
            let tik = t[i * c + k];
            if tik == 0.0 {
                continue;
            }
            for (o, xv) in row.iter_mut().zip(&x[k * n..(k + 1) * n]) {
                *o += tik * (xv - mu_in[k]);
            }
        }
    }
    Tensor::new(vec![c, n], out)?.ensure_finite("wct")
}

/// Channel covariance and mean of a `[C, H, W]` feature map.
pub fn feature_moments(feat: &Tensor) -> Result<(SymMatrix, Vec<f64>)> {
    let (c, h, w) = feat.dims3()?;
    covariance(&feat.clone().reshape(vec![c, h * w])?)
}

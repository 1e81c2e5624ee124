//! Forward and backward kernels on `[C, H, W]` tensors.
//!
//! Convolutions are cross-correlations with "same" padding. Every kernel is
//! a plain function so inference can run without a tape.

use super::Tensor;
use crate::{Error, Result};

fn check_spatial(op: &'static str, h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::shape(op, "zero-sized spatial dimensions"));
    }
    Ok(())
}

/// Row/column range of an output plane that reads from in-bounds input
/// pixels when shifted by `offset`.
#[inline]
fn valid_range(len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

struct ConvDims {
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
}

fn conv_dims(input: &Tensor, weight: &Tensor, bias: &Tensor, padding: usize) -> Result<ConvDims> {
    let (c_in, h, w) = input.dims3()?;
    check_spatial("conv2d", h, w)?;
    let [c_out, wc_in, kh, kw] = weight.shape()[..] else {
        return Err(Error::shape(
            "conv2d",
            format!(
                "weight must be [C_out, C_in, k, k], got {:?}",
                weight.shape()
            ),
        ));
    };
    if wc_in != c_in {
        return Err(Error::shape(
            "conv2d",
            format!("channel mismatch: weight expects {wc_in} input channels, input has {c_in}"),
        ));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must be square with odd extent, got {kh}x{kw}"),
        ));
    }
    if padding != (kh - 1) / 2 {
        return Err(Error::shape(
            "conv2d",
            format!("only same padding is supported (k={kh}, padding={padding})"),
        ));
    }
    if bias.shape() != [c_out] {
        return Err(Error::shape(
            "conv2d",
            format!("bias must be [{c_out}], got {:?}", bias.shape()),
        ));
    }
    Ok(ConvDims {
        c_in,
        c_out,
        h,
        w,
        k: kh,
        pad: padding,
    })
}

pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, padding: usize) -> Result<Tensor> {
    let d = conv_dims(input, weight, bias, padding)?;
    let plane = d.h * d.w;
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0.0; d.c_out * plane];
    for co in 0..d.c_out {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.fill(bias.data()[co]);
        for ci in 0..d.c_in {
            let xin = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..d.k {
                let dy = ky as isize - d.pad as isize;
                let (y0, y1) = valid_range(d.h, dy);
                for kx in 0..d.k {
                    let wv = wt[((co * d.c_in + ci) * d.k + ky) * d.k + kx];
                    let dx = kx as isize - d.pad as isize;
                    let (x0, x1) = valid_range(d.w, dx);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let orow = &mut o[y * d.w + x0..y * d.w + x1];
                        let start = (sy * d.w) as isize + x0 as isize + dx;
                        let irow = &xin[start as usize..start as usize + (x1 - x0)];
                        for (ov, iv) in orow.iter_mut().zip(irow) {
                            *ov += wv * iv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![d.c_out, d.h, d.w], out)
}

/// Gradients of a convolution. Returns `(d_input, d_weight, d_bias)`; the
/// input gradient is skipped when `need_input` is false.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    padding: usize,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let d = conv_dims(input, weight, bias, padding)?;
    if grad_out.shape() != [d.c_out, d.h, d.w] {
        return Err(Error::shape("conv2d_backward", "upstream gradient shape"));
    }
    let plane = d.h * d.w;
    let x = input.data();
    let wt = weight.data();
    let g = grad_out.data();
    let mut gx = if need_input {
        Some(vec![0.0; d.c_in * plane])
    } else {
        None
    };
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; d.c_out];
    for co in 0..d.c_out {
        let go = &g[co * plane..(co + 1) * plane];
        gb[co] = go.iter().sum();
        for ci in 0..d.c_in {
            let xin = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..d.k {
                let dy = ky as isize - d.pad as isize;
                let (y0, y1) = valid_range(d.h, dy);
                for kx in 0..d.k {
                    let widx = ((co * d.c_in + ci) * d.k + ky) * d.k + kx;
                    let wv = wt[widx];
                    let dx = kx as isize - d.pad as isize;
                    let (x0, x1) = valid_range(d.w, dx);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let grow = &go[y * d.w + x0..y * d.w + x1];
                        let start = ((sy * d.w) as isize + x0 as isize + dx) as usize;
                        let irow = &xin[start..start + (x1 - x0)];
                        for (gv, iv) in grow.iter().zip(irow) {
                            acc += gv * iv;
                        }
                        if let Some(gx) = gx.as_mut() {
                            let gxrow = &mut gx[ci * plane + start..ci * plane + start + (x1 - x0)];
                            for (gi, gv) in gxrow.iter_mut().zip(grow) {
                                *gi += wv * gv;
                            }
                        }
                    }
                    gw[widx] = acc;
                }
            }
        }
    }
    Ok((
        gx.map(|v| Tensor::new(input.shape().to_vec(), v))
            .transpose()?,
        Tensor::new(weight.shape().to_vec(), gw)?,
        Tensor::new(vec![d.c_out], gb)?,
    ))
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Subgradient at exactly zero is zero.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor {
        shape: input.shape().to_vec(),
        data,
    }
}

pub fn upsample_nearest(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor < 1 {
        return Err(Error::InvalidArgument(format!(
            "upsample factor must be >= 1, got {factor}"
        )));
    }
    let (c, h, w) = input.dims3()?;
    if factor == 1 {
        return Ok(input.clone());
    }
    let (oh, ow) = (h * factor, w * factor);
    let x = input.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            let src = &x[(ch * h + y / factor) * w..(ch * h + y / factor + 1) * w];
            let dst = &mut out[(ch * oh + y) * ow..(ch * oh + y + 1) * ow];
            for (xo, v) in dst.iter_mut().enumerate() {
                *v = src[xo / factor];
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Sums the upstream gradient over each `factor x factor` replication block.
pub fn upsample_nearest_backward(grad_out: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, oh, ow) = grad_out.dims3()?;
    if factor < 1 || oh % factor != 0 || ow % factor != 0 {
        return Err(Error::shape(
            "upsample_backward",
            "gradient not divisible by factor",
        ));
    }
    let (h, w) = (oh / factor, ow / factor);
    let g = grad_out.data();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            let row = &g[(ch * oh + y) * ow..(ch * oh + y + 1) * ow];
            let dst = &mut out[(ch * h + y / factor) * w..(ch * h + y / factor + 1) * w];
            for (xo, v) in row.iter().enumerate() {
                dst[xo / factor] += v;
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// 2x2 average pooling with stride 2. Spatial extents must be even.
pub fn avg_pool2(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::shape(
            "avg_pool2",
            format!("odd or empty extent {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let base = (ch * h + 2 * y) * w + 2 * xo;
                out[(ch * oh + y) * ow + xo] =
                    0.25 * (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Per-channel `(x - mean) / sqrt(var + eps)` with population variance.
/// Returns the output and the per-channel inverse standard deviations.
pub fn instance_norm(input: &Tensor, eps: f64) -> Result<(Tensor, Vec<f64>)> {
    let (c, h, w) = input.dims3()?;
    check_spatial("instance_norm", h, w)?;
    let n = (h * w) as f64;
    let plane = h * w;
    let mut out = input.data().to_vec();
    let mut inv_std = Vec::with_capacity(c);
    for ch in 0..c {
        let p = &mut out[ch * plane..(ch + 1) * plane];
        let mean = p.iter().sum::<f64>() / n;
        let var = p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + eps).sqrt();
        for v in p.iter_mut() {
            *v = (*v - mean) * is;
        }
        inv_std.push(is);
    }
    Ok((Tensor::new(vec![c, h, w], out)?, inv_std))
}

/// `dx = inv_std * (dy - mean(dy) - y * mean(dy * y))`, using the forward
/// output `y`.
pub fn instance_norm_backward(
    output: &Tensor,
    inv_std: &[f64],
    grad_out: &Tensor,
) -> Result<Tensor> {
    let (c, h, w) = output.dims3()?;
    let plane = h * w;
    let n = plane as f64;
    let y = output.data();
    let g = grad_out.data();
    let mut out = vec![0.0; c * plane];
    for ch in 0..c {
        let ys = &y[ch * plane..(ch + 1) * plane];
        let gs = &g[ch * plane..(ch + 1) * plane];
        let mean_g = gs.iter().sum::<f64>() / n;
        let mean_gy = gs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / n;
        for ((o, gv), yv) in out[ch * plane..(ch + 1) * plane].iter_mut().zip(gs).zip(ys) {
            *o = inv_std[ch] * (gv - mean_g - yv * mean_gy);
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Channel-wise concatenation.
pub fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ca, ha, wa) = a.dims3()?;
    let (cb, hb, wb) = b.dims3()?;
    if (ha, wa) != (hb, wb) {
        return Err(Error::shape(
            "concat",
            format!("spatial mismatch {ha}x{wa} vs {hb}x{wb}"),
        ));
    }
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(vec![ca + cb, ha, wa], data)
}

/// Splits off the first `c1` channels. Inverse of [`concat`].
pub fn split(t: &Tensor, c1: usize) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = t.dims3()?;
    if c1 > c {
        return Err(Error::shape(
            "split",
            format!("cannot take {c1} of {c} channels"),
        ));
    }
    let at = c1 * h * w;
    Ok((
        Tensor::new(vec![c1, h, w], t.data()[..at].to_vec())?,
        Tensor::new(vec![c - c1, h, w], t.data()[at..].to_vec())?,
    ))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "add",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Mean of squared differences.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "mse_loss",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    if pred.numel() == 0 {
        return Err(Error::shape("mse_loss", "empty tensors"));
    }
    let ss: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(ss / pred.numel() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t3(c: usize, h: usize, w: usize, data: Vec<f64>) -> Tensor {
        Tensor::new(vec![c, h, w], data).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::full(&[1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 1, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        assert_eq!(conv2d(&x, &w, &b, 0).unwrap(), x);
    }

    #[test]
    fn conv_all_ones_kernel_center_is_total() {
        let x = t3(1, 3, 3, (1..=9).map(f64::from).collect());
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, &Tensor::zeros(&[1]), 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert_eq!(y.data()[4], 45.0);
        // corner sees 1,2,4,5
        assert_eq!(y.data()[0], 12.0);
    }

    #[test]
    fn conv_errors() {
        let x = Tensor::zeros(&[2, 3, 3]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        let err = conv2d(&x, &w, &Tensor::zeros(&[1]), 1).unwrap_err();
        assert!(err.to_string().contains("channel mismatch"));
        let empty = Tensor::zeros(&[3, 0, 3]);
        assert!(conv2d(&empty, &w, &Tensor::zeros(&[1]), 1).is_err());
        assert!(conv2d(&Tensor::zeros(&[3, 3, 3]), &w, &Tensor::zeros(&[1]), 0).is_err());
    }

    #[test]
    fn relu_values() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::full(&[3], 1.0));
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn upsample_cases() {
        let x = t3(1, 1, 1, vec![7.0]);
        assert_eq!(upsample_nearest(&x, 1).unwrap(), x);
        let y = upsample_nearest(&x, 2).unwrap();
        assert_eq!(y, Tensor::full(&[1, 2, 2], 7.0));
        let g = upsample_nearest_backward(&Tensor::full(&[2, 4, 6], 1.0), 2).unwrap();
        assert_eq!(g.shape(), &[2, 2, 3]);
        assert!(g.data().iter().all(|&v| v == 4.0));
        assert!(upsample_nearest(&x, 0).is_err());
    }

    #[test]
    fn instance_norm_cases() {
        let (y, _) = instance_norm(&Tensor::full(&[2, 2, 2], 3.0), 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let (y, _) = instance_norm(&t3(1, 1, 2, vec![1.0, 3.0]), 1e-5).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-5);
        assert!((y.data()[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn concat_split_shapes() {
        let a = Tensor::full(&[3, 4, 4], 1.0);
        let b = Tensor::full(&[5, 4, 4], 2.0);
        let c = concat(&a, &b).unwrap();
        assert_eq!(c.shape(), &[8, 4, 4]);
        let (a2, b2) = split(&c, 3).unwrap();
        assert_eq!((a2, b2), (a.clone(), b));
        let empty = Tensor::zeros(&[0, 4, 4]);
        assert_eq!(concat(&a, &empty).unwrap(), a);
        assert!(concat(&a, &Tensor::zeros(&[1, 4, 5])).is_err());
    }

    #[test]
    fn mse_values() {
        let x = Tensor::new(vec![2], vec![0.3, -1.0]).unwrap();
        assert_eq!(mse_loss(&x, &x).unwrap(), 0.0);
        let z = Tensor::zeros(&[2]);
        let o = Tensor::full(&[2], 1.0);
        assert_eq!(mse_loss(&z, &o).unwrap(), 1.0);
        assert!(mse_loss(&z, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn avg_pool_halves() {
        let x = t3(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(avg_pool2(&x).unwrap().data(), &[2.5]);
        assert!(avg_pool2(&Tensor::zeros(&[1, 3, 2])).is_err());
    }
}

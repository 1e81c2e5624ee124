//! Image loading, saving and the seeded synthetic dataset.
//!
//! Pixels are fp64 in `[0, 1]` (`value / 255`), laid out `[3, H, W]`.

use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::rng::{derive_seed, seeded};
use crate::tensor::Tensor;
use crate::{Error, Result};

const EXTENSIONS: [&str; 3] = ["png", "ppm", "pnm"];

fn image_err(path: &Path, msg: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    Ok(from_rgb8(&img))
}

pub fn from_rgb8(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = f64::from(px[c]) / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("sized above")
}

/// Quantises to 8 bits after clamping into `[0, 1]`.
pub fn to_rgb8(t: &Tensor) -> Result<RgbImage> {
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(Error::shape(
            "to_rgb8",
            format!("expected 3 channels, got {c}"),
        ));
    }
    let d = t.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |ch: usize| {
            let v = d[(ch * h + y as usize) * w + x as usize];
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        image::Rgb([px(0), px(1), px(2)])
    }))
}

/// Writes PNG or binary PPM depending on the extension.
pub fn save_image(t: &Tensor, path: &Path) -> Result<()> {
    let format = match ext_of(path).as_deref() {
        Some("png") => ImageFormat::Png,
        Some("ppm") | Some("pnm") => ImageFormat::Pnm,
        _ => return Err(image_err(path, "unsupported output extension (png or ppm)")),
    };
    to_rgb8(t)?
        .save_with_format(path, format)
        .map_err(|e| image_err(path, e))
}

fn ext_of(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

/// Lists PNG/PPM files of a directory in name order.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| image_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && ext_of(p)
                    .map(|e| EXTENSIONS.contains(&e.as_str()))
                    .unwrap_or(false)
        })
        .collect();
    out.sort();
    Ok(out)
}

pub fn load_dir(dir: &Path) -> Result<Vec<(PathBuf, Tensor)>> {
    list_images(dir)?
        .into_iter()
        .map(|p| load_image(&p).map(|t| (p, t)))
        .collect()
}

/// Centre-crops so both extents are multiples of `m`. Returns the cropped
/// image and whether anything was removed.
pub fn center_crop_to_multiple(t: &Tensor, m: usize) -> Result<(Tensor, bool)> {
    let (_, h, w) = t.dims3()?;
    let (nh, nw) = (h / m * m, w / m * m);
    if nh == 0 || nw == 0 {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} is smaller than {m}x{m}"
        )));
    }
    if (nh, nw) == (h, w) {
        return Ok((t.clone(), false));
    }
    Ok((crop(t, (h - nh) / 2, (w - nw) / 2, nh, nw)?, true))
}

pub fn crop(t: &Tensor, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor> {
    let (c, th, tw) = t.dims3()?;
    if top + h > th || left + w > tw {
        return Err(Error::shape("crop", "window outside image"));
    }
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in top..top + h {
            let row = (ch * th + y) * tw;
            data.extend_from_slice(&t.data()[row + left..row + left + w]);
        }
    }
    Tensor::new(vec![c, h, w], data)
}

/// SHA-256 over the shape and little-endian pixel values.
pub fn tensor_hash(t: &Tensor) -> String {
    let mut h = Sha256::new();
    for &e in t.shape() {
        h.update((e as u64).to_le_bytes());
    }
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Deterministic colored-noise-plus-gradient image, quantised to 8 bits so
/// a PNG round trip is lossless.
pub fn synthetic_image<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Tensor {
    let mut data = vec![0.0; 3 * h * w];
    let octaves = [(4usize, 0.22), (8, 0.12), (16, 0.06)];
    for ch in 0..3 {
        let base: f64 = rng.random_range(0.25..0.75);
        let gx: f64 = rng.random_range(-0.3..0.3);
        let gy: f64 = rng.random_range(-0.3..0.3);
        let grids: Vec<(usize, f64, Vec<f64>)> = octaves
            .iter()
            .map(|&(cells, amp)| {
                let g = (0..(cells + 1) * (cells + 1))
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                (cells, amp, g)
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                let u = (x as f64 + 0.5) / w as f64;
                let v = (y as f64 + 0.5) / h as f64;
                let mut val = base + gx * (u - 0.5) + gy * (v - 0.5);
                for (cells, amp, g) in &grids {
                    val += amp * bilinear(g, *cells, u, v);
                }
                let q = (val.clamp(0.0, 1.0) * 255.0).round() / 255.0;
                data[(ch * h + y) * w + x] = q;
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("sized above")
}

fn bilinear(grid: &[f64], cells: usize, u: f64, v: f64) -> f64 {
    let fx = u * cells as f64;
    let fy = v * cells as f64;
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x0, y0) = (x0.min(cells - 1), y0.min(cells - 1));
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    let at = |x: usize, y: usize| grid[y * (cells + 1) + x];
    let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
    let bot = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
    top * (1.0 - ty) + bot * ty
}

/// `n` synthetic images from stream `stream` of `seed`.
pub fn synthetic_set(n: usize, h: usize, w: usize, seed: u64, stream: u64) -> Vec<Tensor> {
    (0..n)
        .map(|i| {
            let mut rng = seeded(derive_seed(derive_seed(seed, stream), i as u64));
            synthetic_image(h, w, &mut rng)
        })
        .collect()
}

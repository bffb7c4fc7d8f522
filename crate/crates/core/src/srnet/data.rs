//! Training data: bicubic resampling, aligned patch pairs and procedural
//! test images. Images are single planes `(1, 1, h, w)` in `[0, 1]`.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const CUBIC_A: f64 = -0.5;

fn cubic(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (CUBIC_A + 2.0) * t * t * t - (CUBIC_A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        CUBIC_A * (t * t * t - 5.0 * t * t + 8.0 * t - 4.0)
    } else {
        0.0
    }
}

/// Per output sample: first input index and normalised weights.
fn axis_weights(n_in: usize, n_out: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = n_in as f64 / n_out as f64;
    // widen the kernel when shrinking so it also low-passes
    let stretch = scale.max(1.0);
    let support = 2.0 * stretch;
    (0..n_out)
        .map(|j| {
            let center = (j as f64 + 0.5) * scale - 0.5;
            let lo = ((center - support).floor() as isize).max(0) as usize;
            let hi = ((center + support).ceil() as isize).min(n_in as isize - 1) as usize;
            let mut w: Vec<f64> = (lo..=hi).map(|i| cubic((i as f64 - center) / stretch)).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            (lo, w)
        })
        .collect()
}

/// Separable bicubic resampling (a = -0.5) of a single plane to
/// `out_h x out_w`, antialiased when shrinking. Weights are renormalised
/// over in-bounds samples at the borders.
pub fn bicubic_resize(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = img.plane_dims()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::param("size", "output dimensions must be positive"));
    }
    let (wy, wx) = (axis_weights(h, out_h), axis_weights(w, out_w));
    let src = img.data();
    let mut rows = vec![0.0; h * out_w];
    for y in 0..h {
        for (x, (lo, ws)) in wx.iter().enumerate() {
            rows[y * out_w + x] = ws.iter().enumerate().map(|(k, v)| v * src[y * w + lo + k]).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (y, (lo, ws)) in wy.iter().enumerate() {
        for (k, v) in ws.iter().enumerate() {
            let r = &rows[(lo + k) * out_w..(lo + k + 1) * out_w];
            for (o, s) in out[y * out_w..(y + 1) * out_w].iter_mut().zip(r) {
                *o += v * s;
            }
        }
    }
    Tensor::new(vec![1, 1, out_h, out_w], out)
}

/// Shrinks by an integer factor; both dimensions must be divisible by `u`.
pub fn bicubic_downscale(img: &Tensor, u: usize) -> Result<Tensor> {
    let (h, w) = img.plane_dims()?;
    if u == 0 {
        return Err(Error::param("U", "factor must be at least 1"));
    }
    if h % u != 0 || w % u != 0 {
        return Err(Error::param(
            "image",
            format!("{h}x{w} is not divisible by {u}; crop first"),
        ));
    }
    if u == 1 {
        return Tensor::new(vec![1, 1, h, w], img.data().to_vec());
    }
    bicubic_resize(img, h / u, w / u)
}

/// Top-left crop to dimensions divisible by `u`.
pub fn crop_to_multiple(img: &Tensor, u: usize) -> Result<Tensor> {
    let (h, w) = img.plane_dims()?;
    let (ch, cw) = (h / u * u, w / u * u);
    if ch == 0 || cw == 0 {
        return Err(Error::param("image", format!("{h}x{w} is smaller than the factor {u}")));
    }
    let data = (0..ch).flat_map(|y| img.data()[y * w..y * w + cw].iter().copied()).collect();
    Tensor::new(vec![1, 1, ch, cw], data)
}

fn crop(img: &[f64], w: usize, y0: usize, x0: usize, size: usize) -> Tensor {
    let data = (y0..y0 + size)
        .flat_map(|y| img[y * w + x0..y * w + x0 + size].iter().copied())
        .collect();
    Tensor::new(vec![1, 1, size, size], data).expect("patch shape")
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub lr: Tensor,
    pub hr: Tensor,
    pub hr_origin: (usize, usize),
    pub lr_origin: (usize, usize),
}

/// Grid of aligned `hr_size` patches with the given stride. The LR patch is
/// cut from the bicubic-downscaled full image, so its origin times `u` is
/// the HR origin. Images smaller than one patch yield nothing (with a
/// warning).
pub fn extract_patches(hr: &Tensor, u: usize, hr_size: usize, stride: usize) -> Result<Vec<PatchPair>> {
    if u == 0 || hr_size == 0 || hr_size % u != 0 {
        return Err(Error::param("hr_size", format!("{hr_size} must be a positive multiple of {u}")));
    }
    if stride == 0 || stride % u != 0 {
        return Err(Error::param("stride", format!("{stride} must be a positive multiple of {u}")));
    }
    let (h, w) = hr.plane_dims()?;
    if h < hr_size || w < hr_size {
        log::warn!("skipping {h}x{w} image: smaller than one {hr_size}x{hr_size} patch");
        return Ok(Vec::new());
    }
    let hr = crop_to_multiple(hr, u)?;
    let (h, w) = hr.plane_dims()?;
    let lr = bicubic_downscale(&hr, u)?;
    let lw = w / u;
    let ls = hr_size / u;
    let mut out = Vec::new();
    for y in (0..=h - hr_size).step_by(stride) {
        for x in (0..=w - hr_size).step_by(stride) {
            out.push(PatchPair {
                lr: crop(lr.data(), lw, y / u, x / u, ls),
                hr: crop(hr.data(), w, y, x, hr_size),
                hr_origin: (y, x),
                lr_origin: (y / u, x / u),
            });
        }
    }
    Ok(out)
}

/// Keeps `n` pairs chosen by a seeded shuffle (all of them if `n` is larger).
pub fn subsample_patches(mut pairs: Vec<PatchPair>, n: usize, seed: u64) -> Vec<PatchPair> {
    if n < pairs.len() {
        pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        pairs.truncate(n);
    }
    pairs
}

/// Procedural image with smooth shading, oriented gratings, hard-edged
/// shapes and fine texture.
pub fn synthetic_image(seed: u64, h: usize, w: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (gx, gy, base) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(0.3..0.7));
    let waves: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(3..6))
        .map(|_| {
            let theta: f64 = rng.random_range(0.0..PI);
            let freq: f64 = rng.random_range(0.02..0.22);
            (
                theta.cos() * freq * 2.0 * PI,
                theta.sin() * freq * 2.0 * PI,
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.03..0.12),
            )
        })
        .collect();
    let shapes: Vec<(bool, f64, f64, f64, f64, f64)> = (0..rng.random_range(4..9))
        .map(|_| {
            (
                rng.random_bool(0.5),
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                rng.random_range(4.0..(h.min(w) as f64 / 3.0).max(5.0)),
                rng.random_range(4.0..(h.min(w) as f64 / 3.0).max(5.0)),
                rng.random_range(-0.35..0.35),
            )
        })
        .collect();
    let noise: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut data = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = (y as f64, x as f64);
            let mut v = base + gx * fx / w as f64 + gy * fy / h as f64;
            for &(kx, ky, ph, amp) in &waves {
                v += amp * (kx * fx + ky * fy + ph).sin();
            }
            for &(disc, cy, cx, ry, rx, level) in &shapes {
                let inside = if disc {
                    ((fy - cy) / ry).powi(2) + ((fx - cx) / rx).powi(2) <= 1.0
                } else {
                    (fy - cy).abs() <= ry / 2.0 && (fx - cx).abs() <= rx / 2.0
                };
                if inside {
                    v += level;
                }
            }
            // 3x3 box-smoothed noise
            let mut n = 0.0;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        n += noise[yy as usize * w + xx as usize];
                    }
                }
            }
            data[y * w + x] = (v + 0.04 * n / 9.0).clamp(0.0, 1.0);
        }
    }
    Tensor::new(vec![1, 1, h, w], data).expect("image shape")
}

pub fn synthetic_images(count: usize, size: usize, seed: u64) -> Vec<Tensor> {
    (0..count)
        .map(|i| synthetic_image(seed.wrapping_mul(1_000_003).wrapping_add(i as u64), size, size))
        .collect()
}

//! Upsampling layers: transposed ("deconvolution") layers in their direct and
//! polyphase forms, sub-pixel convolution with a periodic shuffle, resize
//! convolution, and the zero-order-hold corrections.
//!
//! Every layer maps `(n, c, h, w)` to a single-channel `(n, 1, h*U, w*U)`
//! output (`U` per axis, see [`Upscale`]).
//!
//! Deconvolution convention: output sample `o` of an axis is
//! `b + Σ_k H[k] v[o - k + s*U]` where `v` is the zero-stuffed input and
//! `s = K / (2U)` re-centres the kernel by whole input samples. Output phase
//! `o mod U` therefore sees exactly the taps `k ≡ o (mod U)`.
//!
//! Accumulation order is fixed to (channel, input row ascending, input column
//! ascending) in every form so the direct, polyphase and sub-pixel paths agree
//! bit for bit.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Upscaling factor per axis. 1D signals use `rows == 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Upscale {
    pub rows: usize,
    pub cols: usize,
}

impl Upscale {
    pub fn d1(u: usize) -> Self {
        Upscale { rows: 1, cols: u }
    }

    pub fn d2(u: usize) -> Self {
        Upscale { rows: u, cols: u }
    }

    pub fn phases(&self) -> usize {
        self.rows * self.cols
    }

    /// Phase index of output sample `(oy, ox)`: `row_phase * cols + col_phase`.
    pub fn phase_of(&self, oy: usize, ox: usize) -> usize {
        (oy % self.rows) * self.cols + ox % self.cols
    }

    fn check(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::param("U", "upscaling factor must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsamplerKind {
    Deconv,
    Subpixel,
    ResizeConv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    None,
    /// `H0` appended after the upsampler (approaches A and B).
    PostH0,
    /// `H0` folded into the deconvolution kernels (approach C).
    InsideH0,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpsamplerSpec {
    pub kind: UpsamplerKind,
    pub correction: Correction,
    pub factor: usize,
    /// Learnable kernel size: `K_3` for deconv and resize convolution, the
    /// per-phase kernel for sub-pixel, and the quotient `P` for approach C.
    pub kernel_size: usize,
}

impl UpsamplerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.factor == 0 {
            return Err(Error::Config("factor must be at least 1".into()));
        }
        if self.kernel_size == 0 {
            return Err(Error::Config("kernel_size must be at least 1".into()));
        }
        match (self.kind, self.correction) {
            (UpsamplerKind::Subpixel | UpsamplerKind::ResizeConv, Correction::InsideH0) => Err(Error::Config(
                "inside_h0 (approach C) is applicable to only deconvolution layers".into(),
            )),
            (UpsamplerKind::ResizeConv, Correction::PostH0) => Err(Error::Config(
                "resize_conv is already free of checkerboard artifacts; correction must be none".into(),
            )),
            _ => Ok(()),
        }
    }
}

fn deconv_shift(k: usize, u: usize) -> isize {
    (k / (2 * u)) as isize
}

// ---------------------------------------------------------------------------
// shifted plane kernels

/// `dst[y][x] += weight * src[y + dy][x + dx]` over the valid region.
fn correlate_acc(dst: &mut [f64], src: &[f64], h: usize, w: usize, dy: isize, dx: isize, weight: f64) {
    let (x0, x1) = valid_range(w, dx);
    if x0 >= x1 {
        return;
    }
    for y in 0..h {
        let sy = y as isize + dy;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        let srow = &src[sy as usize * w..(sy as usize + 1) * w];
        let drow = &mut dst[y * w..(y + 1) * w];
        let s = (x0 as isize + dx) as usize;
        for (d, v) in drow[x0..x1].iter_mut().zip(&srow[s..s + (x1 - x0)]) {
            *d += weight * v;
        }
    }
}

/// `Σ g[y][x] * src[y + dy][x + dx]` over the valid region.
fn correlate_dot(g: &[f64], src: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let (x0, x1) = valid_range(w, dx);
    let mut acc = 0.0;
    if x0 >= x1 {
        return acc;
    }
    for y in 0..h {
        let sy = y as isize + dy;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        let s = (x0 as isize + dx) as usize;
        let srow = &src[sy as usize * w + s..sy as usize * w + s + (x1 - x0)];
        let grow = &g[y * w + x0..y * w + x1];
        acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
    }
    acc
}

/// `dst[y + dy][x + dx] += weight * g[y][x]` over the valid region.
fn scatter_acc(dst: &mut [f64], g: &[f64], h: usize, w: usize, dy: isize, dx: isize, weight: f64) {
    let (x0, x1) = valid_range(w, dx);
    if x0 >= x1 {
        return;
    }
    for y in 0..h {
        let sy = y as isize + dy;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        let s = (x0 as isize + dx) as usize;
        let drow = &mut dst[sy as usize * w + s..sy as usize * w + s + (x1 - x0)];
        for (d, v) in drow.iter_mut().zip(&g[y * w + x0..y * w + x1]) {
            *d += weight * v;
        }
    }
}

/// Output columns `x` with `0 <= x + dx < w`.
fn valid_range(w: usize, dx: isize) -> (usize, usize) {
    let lo = (-dx).max(0) as usize;
    let hi = (w as isize - dx).clamp(0, w as isize) as usize;
    (lo.min(w), hi)
}

/// One tap of a phase filter: input channel, offset relative to the
/// low-resolution output position, and weight.
#[derive(Clone, Copy, Debug)]
struct Tap {
    c: usize,
    dy: isize,
    dx: isize,
    weight: f64,
}

/// Taps feeding each output phase of a deconvolution, in accumulation order.
fn deconv_phase_taps(kernels: &Tensor, up: Upscale) -> Result<Vec<Vec<Tap>>> {
    let (one, c, kh, kw) = kernels.dims4()?;
    if one != 1 {
        return Err(Error::Dimension {
            axis: "batch",
            expected: 1,
            got: one,
        });
    }
    let (sy, sx) = (deconv_shift(kh, up.rows), deconv_shift(kw, up.cols));
    let data = kernels.data();
    let mut phases = Vec::with_capacity(up.phases());
    for ry in 0..up.rows {
        for rx in 0..up.cols {
            let mut taps = Vec::new();
            for ci in 0..c {
                for ky in (ry..kh).step_by(up.rows).rev() {
                    let jy = ((ky - ry) / up.rows) as isize;
                    for kx in (rx..kw).step_by(up.cols).rev() {
                        let jx = ((kx - rx) / up.cols) as isize;
                        taps.push(Tap {
                            c: ci,
                            dy: sy - jy,
                            dx: sx - jx,
                            weight: data[(ci * kh + ky) * kw + kx],
                        });
                    }
                }
            }
            phases.push(taps);
        }
    }
    Ok(phases)
}

/// Taps of every sub-pixel phase kernel (`same` padding), in accumulation order.
fn subpixel_phase_taps(kernels: &Tensor, up: Upscale) -> Result<Vec<Vec<Tap>>> {
    let (p, c, kh, kw) = kernels.dims4()?;
    if p != up.phases() {
        return Err(Error::Dimension {
            axis: "phases",
            expected: up.phases(),
            got: p,
        });
    }
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let data = kernels.data();
    Ok((0..p)
        .map(|n| {
            let mut taps = Vec::with_capacity(c * kh * kw);
            for ci in 0..c {
                for ty in 0..kh {
                    for tx in 0..kw {
                        taps.push(Tap {
                            c: ci,
                            dy: ty as isize - ph,
                            dx: tx as isize - pw,
                            weight: data[((n * c + ci) * kh + ty) * kw + tx],
                        });
                    }
                }
            }
            taps
        })
        .collect())
}

fn check_channels(x: &Tensor, expected: usize) -> Result<(usize, usize, usize, usize)> {
    let dims = x.dims4()?;
    if dims.1 != expected {
        return Err(Error::Dimension {
            axis: "channels",
            expected,
            got: dims.1,
        });
    }
    Ok(dims)
}

/// Runs per-phase taps on the low-resolution grid, adds the phase biases and
/// interleaves the phases into the high-resolution output.
fn phase_forward(x: &Tensor, phases: &[Vec<Tap>], biases: &[f64], up: Upscale) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, 1, h * up.rows, w * up.cols]);
    let ow = w * up.cols;
    let mut acc = vec![0.0; plane];
    for ni in 0..n {
        let sample = &x.data()[ni * c * plane..(ni + 1) * c * plane];
        let dst = &mut out.data_mut()[ni * plane * up.phases()..(ni + 1) * plane * up.phases()];
        for (p, taps) in phases.iter().enumerate() {
            acc.fill(0.0);
            for t in taps {
                correlate_acc(&mut acc, &sample[t.c * plane..(t.c + 1) * plane], h, w, t.dy, t.dx, t.weight);
            }
            let (ry, rx) = (p / up.cols, p % up.cols);
            for y in 0..h {
                for xq in 0..w {
                    dst[(y * up.rows + ry) * ow + xq * up.cols + rx] = acc[y * w + xq] + biases[p];
                }
            }
        }
    }
    Ok(out)
}

/// Splits a high-resolution gradient back into low-resolution phase planes.
fn phase_planes(grad: &[f64], h: usize, w: usize, up: Upscale) -> Vec<Vec<f64>> {
    let ow = w * up.cols;
    (0..up.phases())
        .map(|p| {
            let (ry, rx) = (p / up.cols, p % up.cols);
            let mut plane = vec![0.0; h * w];
            for y in 0..h {
                for xq in 0..w {
                    plane[y * w + xq] = grad[(y * up.rows + ry) * ow + xq * up.cols + rx];
                }
            }
            plane
        })
        .collect()
}

struct PhaseGrads {
    x: Tensor,
    /// One gradient per tap, in the order of the tap lists.
    taps: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

fn phase_backward(x: &Tensor, phases: &[Vec<Tap>], up: Upscale, grad_out: &Tensor) -> Result<PhaseGrads> {
    let (n, c, h, w) = x.dims4()?;
    let expected = [n, 1, h * up.rows, w * up.cols];
    if grad_out.shape() != expected {
        let got = grad_out.shape();
        let axis = (0..4).find(|&i| got.get(i) != Some(&expected[i])).unwrap_or(0);
        return Err(Error::Dimension {
            axis: crate::tensor::axis_name(axis, 4),
            expected: expected[axis],
            got: got.get(axis).copied().unwrap_or(0),
        });
    }
    let plane = h * w;
    let mut gx = Tensor::zeros(x.shape());
    let mut gtaps: Vec<Vec<f64>> = phases.iter().map(|t| vec![0.0; t.len()]).collect();
    let mut gb = vec![0.0; phases.len()];
    for ni in 0..n {
        let sample = &x.data()[ni * c * plane..(ni + 1) * c * plane];
        let gsample = &grad_out.data()[ni * plane * up.phases()..(ni + 1) * plane * up.phases()];
        let gx_sample = &mut gx.data_mut()[ni * c * plane..(ni + 1) * c * plane];
        for (p, g) in phase_planes(gsample, h, w, up).iter().enumerate() {
            gb[p] += g.iter().sum::<f64>();
            for (i, t) in phases[p].iter().enumerate() {
                let src = &sample[t.c * plane..(t.c + 1) * plane];
                gtaps[p][i] += correlate_dot(g, src, h, w, t.dy, t.dx);
                scatter_acc(&mut gx_sample[t.c * plane..(t.c + 1) * plane], g, h, w, t.dy, t.dx, t.weight);
            }
        }
    }
    Ok(PhaseGrads {
        x: gx,
        taps: gtaps,
        biases: gb,
    })
}

// ---------------------------------------------------------------------------
// deconvolution

/// Direct form: zero-stuff the input by `U` per axis, then convolve each
/// channel with its kernel `H_c`, sum over channels and add the shared bias.
/// `kernels` is `(1, c, kh, kw)`.
pub fn deconv_forward_general(x: &Tensor, kernels: &Tensor, bias: f64, up: Upscale) -> Result<Tensor> {
    up.check()?;
    let (_, kc, kh, kw) = kernels.dims4()?;
    let (n, c, h, w) = check_channels(x, kc)?;
    if kh < up.rows || kw < up.cols {
        log::warn!(
            "deconvolution kernel {kh}x{kw} is smaller than the factor {}x{}; some output positions see no taps",
            up.rows,
            up.cols
        );
    }
    let (oh, ow) = (h * up.rows, w * up.cols);
    let (sy, sx) = (deconv_shift(kh, up.rows) * up.rows as isize, deconv_shift(kw, up.cols) * up.cols as isize);
    let kd = kernels.data();
    let mut out = Tensor::zeros(&[n, 1, oh, ow]);
    let mut stuffed = vec![0.0; c * oh * ow];
    for ni in 0..n {
        stuffed.fill(0.0);
        for ci in 0..c {
            for y in 0..h {
                for xq in 0..w {
                    stuffed[(ci * oh + y * up.rows) * ow + xq * up.cols] = x.data()[((ni * c + ci) * h + y) * w + xq];
                }
            }
        }
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ci in 0..c {
                    for ky in (0..kh).rev() {
                        let iy = oy as isize - ky as isize + sy;
                        if iy < 0 || iy >= oh as isize {
                            continue;
                        }
                        for kx in (0..kw).rev() {
                            let ix = ox as isize - kx as isize + sx;
                            if ix < 0 || ix >= ow as isize {
                                continue;
                            }
                            acc += kd[(ci * kh + ky) * kw + kx] * stuffed[(ci * oh + iy as usize) * ow + ix as usize];
                        }
                    }
                }
                out.data_mut()[(ni * oh + oy) * ow + ox] = acc + bias;
            }
        }
    }
    Ok(out)
}

/// Polyphase form: each output phase is a low-rate filter over the input,
/// and the phases are interleaved. Identical to
/// [`deconv_forward_general`] bit for bit.
pub fn deconv_forward_polyphase(x: &Tensor, kernels: &Tensor, bias: f64, up: Upscale) -> Result<Tensor> {
    up.check()?;
    let (_, kc, _, _) = kernels.dims4()?;
    check_channels(x, kc)?;
    let phases = deconv_phase_taps(kernels, up)?;
    phase_forward(x, &phases, &vec![bias; up.phases()], up)
}

#[derive(Clone, Debug)]
pub struct DeconvGrads {
    pub x: Tensor,
    pub kernels: Tensor,
    pub bias: f64,
}

pub fn deconv_backward(x: &Tensor, kernels: &Tensor, up: Upscale, grad_out: &Tensor) -> Result<DeconvGrads> {
    up.check()?;
    let (_, kc, kh, kw) = kernels.dims4()?;
    check_channels(x, kc)?;
    let phases = deconv_phase_taps(kernels, up)?;
    let g = phase_backward(x, &phases, up, grad_out)?;
    // scatter tap gradients back to kernel positions
    let mut gk = Tensor::zeros(kernels.shape());
    let mut p = 0;
    for ry in 0..up.rows {
        for rx in 0..up.cols {
            let mut i = 0;
            for ci in 0..kc {
                for ky in (ry..kh).step_by(up.rows).rev() {
                    for kx in (rx..kw).step_by(up.cols).rev() {
                        gk.data_mut()[(ci * kh + ky) * kw + kx] = g.taps[p][i];
                        i += 1;
                    }
                }
            }
            p += 1;
        }
    }
    Ok(DeconvGrads {
        x: g.x,
        kernels: gk,
        bias: g.biases.iter().sum(),
    })
}

// ---------------------------------------------------------------------------
// sub-pixel convolution

/// Periodic shuffle: channel `n` of `(b, U_r*U_c, h, w)` lands at row offset
/// `n / U_c` and column offset `n % U_c` of each `U_r x U_c` output cell.
pub fn pixel_shuffle(maps: &Tensor, up: Upscale) -> Result<Tensor> {
    up.check()?;
    let (b, p, h, w) = check_channels(maps, up.phases())?;
    let (oh, ow) = (h * up.rows, w * up.cols);
    let mut out = Tensor::zeros(&[b, 1, oh, ow]);
    for bi in 0..b {
        for n in 0..p {
            let (ry, rx) = (n / up.cols, n % up.cols);
            for y in 0..h {
                for xq in 0..w {
                    out.data_mut()[(bi * oh + y * up.rows + ry) * ow + xq * up.cols + rx] =
                        maps.data()[((bi * p + n) * h + y) * w + xq];
                }
            }
        }
    }
    Ok(out)
}

/// Sub-pixel convolution: `U_r*U_c` stride-1 convolutions (`same` padding)
/// with per-phase biases, followed by [`pixel_shuffle`].
/// `kernels` is `(phases, c, kh, kw)`.
pub fn subpixel_forward(x: &Tensor, kernels: &Tensor, biases: &[f64], up: Upscale) -> Result<Tensor> {
    up.check()?;
    let (_, kc, _, _) = kernels.dims4()?;
    check_channels(x, kc)?;
    if biases.len() != up.phases() {
        return Err(Error::Dimension {
            axis: "phases",
            expected: up.phases(),
            got: biases.len(),
        });
    }
    let phases = subpixel_phase_taps(kernels, up)?;
    phase_forward(x, &phases, biases, up)
}

#[derive(Clone, Debug)]
pub struct SubpixelGrads {
    pub x: Tensor,
    pub kernels: Tensor,
    pub biases: Vec<f64>,
}

pub fn subpixel_backward(x: &Tensor, kernels: &Tensor, up: Upscale, grad_out: &Tensor) -> Result<SubpixelGrads> {
    up.check()?;
    let (_, kc, _, _) = kernels.dims4()?;
    check_channels(x, kc)?;
    let phases = subpixel_phase_taps(kernels, up)?;
    let g = phase_backward(x, &phases, up, grad_out)?;
    Ok(SubpixelGrads {
        x: g.x,
        kernels: Tensor::new(kernels.shape().to_vec(), g.taps.concat())?,
        biases: g.biases,
    })
}

/// Sub-pixel weights that reproduce a deconvolution layer exactly: phase
/// kernels are the (reversed) polyphase components of each `H_c`, padded to
/// the smallest odd size that holds them, and every phase gets the shared bias.
pub fn subpixel_from_deconv(kernels: &Tensor, bias: f64, up: Upscale) -> Result<(Tensor, Vec<f64>)> {
    up.check()?;
    let (_, c, kh, kw) = kernels.dims4()?;
    let size = |k: usize, u: usize| -> usize {
        let s = deconv_shift(k, u);
        let taps = k.div_ceil(u) as isize;
        (1..)
            .step_by(2)
            .find(|&ks: &usize| {
                let half = (ks / 2) as isize;
                half + s - (taps - 1) >= 0 && half + s < ks as isize
            })
            .unwrap()
    };
    let (sh, sw) = (size(kh, up.rows), size(kw, up.cols));
    let mut out = Tensor::zeros(&[up.phases(), c, sh, sw]);
    for (p, taps) in deconv_phase_taps(kernels, up)?.into_iter().enumerate() {
        for t in taps {
            let ty = (t.dy + (sh / 2) as isize) as usize;
            let tx = (t.dx + (sw / 2) as isize) as usize;
            out.data_mut()[((p * c + t.c) * sh + ty) * sw + tx] = t.weight;
        }
    }
    Ok((out, vec![bias; up.phases()]))
}

// ---------------------------------------------------------------------------
// resize convolution

pub fn nearest_upsample(x: &Tensor, up: Upscale) -> Result<Tensor> {
    up.check()?;
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (h * up.rows, w * up.cols);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    for plane in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                out.data_mut()[(plane * oh + oy) * ow + ox] = x.data()[(plane * h + oy / up.rows) * w + ox / up.cols];
            }
        }
    }
    Ok(out)
}

fn nearest_upsample_backward(grad: &Tensor, up: Upscale) -> Result<Tensor> {
    let (n, c, oh, ow) = grad.dims4()?;
    let (h, w) = (oh / up.rows, ow / up.cols);
    let mut out = Tensor::zeros(&[n, c, h, w]);
    for plane in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                out.data_mut()[(plane * h + oy / up.rows) * w + ox / up.cols] += grad.data()[(plane * oh + oy) * ow + ox];
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour upsampling followed by a stride-1 `same` convolution.
/// `kernel` is `(1, c, kh, kw)`. The convolution runs tap by tap on the
/// upsampled planes, so every output sample costs the full `c*kh*kw`.
pub fn resize_conv_forward(x: &Tensor, kernel: &Tensor, bias: f64, up: Upscale) -> Result<Tensor> {
    let (_, kc, kh, kw) = kernel.dims4()?;
    check_channels(x, kc)?;
    let xu = nearest_upsample(x, up)?;
    let (n, c, oh, ow) = xu.dims4()?;
    let plane = oh * ow;
    let (pt, pl) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = Tensor::zeros(&[n, 1, oh, ow]);
    for ni in 0..n {
        let dst = &mut out.data_mut()[ni * plane..(ni + 1) * plane];
        for ci in 0..c {
            let src = &xu.data()[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = kernel.data()[(ci * kh + ky) * kw + kx];
                    correlate_acc(dst, src, oh, ow, ky as isize - pt, kx as isize - pl, wv);
                }
            }
        }
        dst.iter_mut().for_each(|v| *v += bias);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ResizeConvGrads {
    pub x: Tensor,
    pub kernel: Tensor,
    pub bias: f64,
}

pub fn resize_conv_backward(x: &Tensor, kernel: &Tensor, up: Upscale, grad_out: &Tensor) -> Result<ResizeConvGrads> {
    let (_, kc, kh, kw) = kernel.dims4()?;
    check_channels(x, kc)?;
    let xu = nearest_upsample(x, up)?;
    let (n, c, oh, ow) = xu.dims4()?;
    if grad_out.shape() != [n, 1, oh, ow] {
        return Err(Error::Shape {
            shape: grad_out.shape().to_vec(),
            reason: format!("expected gradient of shape {:?}", [n, 1, oh, ow]),
        });
    }
    let plane = oh * ow;
    let (pt, pl) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut gxu = Tensor::zeros(xu.shape());
    let mut gk = Tensor::zeros(kernel.shape());
    let mut gb = 0.0;
    for ni in 0..n {
        let g = &grad_out.data()[ni * plane..(ni + 1) * plane];
        gb += g.iter().sum::<f64>();
        for ci in 0..c {
            let off = (ni * c + ci) * plane;
            let src = &xu.data()[off..off + plane];
            for ky in 0..kh {
                for kx in 0..kw {
                    let (dy, dx) = (ky as isize - pt, kx as isize - pl);
                    let k = (ci * kh + ky) * kw + kx;
                    gk.data_mut()[k] += correlate_dot(g, src, oh, ow, dy, dx);
                    let wv = kernel.data()[k];
                    scatter_acc(&mut gxu.data_mut()[off..off + plane], g, oh, ow, dy, dx, wv);
                }
            }
        }
    }
    Ok(ResizeConvGrads {
        x: nearest_upsample_backward(&gxu, up)?,
        kernel: gk,
        bias: gb,
    })
}

// ---------------------------------------------------------------------------
// zero-order hold

/// Convolves every plane with the all-ones `U_r x U_c` kernel (top-left
/// anchored, zero padded): `z[y][x] = Σ_{a<U_r, b<U_c} y[y-a][x-b]`.
/// Away from the top/left border each output sums exactly one period, so any
/// `U`-periodic input becomes constant.
pub fn h0_postfilter(y: &Tensor, up: Upscale) -> Result<Tensor> {
    h0_postfilter_scaled(y, up, 1.0)
}

pub fn h0_postfilter_scaled(y: &Tensor, up: Upscale, gain: f64) -> Result<Tensor> {
    up.check()?;
    let (n, c, h, w) = y.dims4()?;
    let mut out = Tensor::zeros(y.shape());
    let mut rows = vec![0.0; h * w];
    for plane in 0..n * c {
        let src = &y.data()[plane * h * w..(plane + 1) * h * w];
        // separable: U_c-tap running window along rows, then U_r along columns
        for (r, srow) in rows.chunks_exact_mut(w).zip(src.chunks_exact(w)) {
            for ox in 0..w {
                r[ox] = srow[ox + 1 - up.cols.min(ox + 1)..=ox].iter().sum();
            }
        }
        let dst = &mut out.data_mut()[plane * h * w..(plane + 1) * h * w];
        for oy in 0..h {
            let d = &mut dst[oy * w..(oy + 1) * w];
            for a in 0..up.rows.min(oy + 1) {
                for (dv, rv) in d.iter_mut().zip(&rows[(oy - a) * w..(oy - a + 1) * w]) {
                    *dv += rv;
                }
            }
            d.iter_mut().for_each(|v| *v *= gain);
        }
    }
    Ok(out)
}

pub fn h0_postfilter_backward(grad_out: &Tensor, up: Upscale, gain: f64) -> Result<Tensor> {
    up.check()?;
    let (n, c, h, w) = grad_out.dims4()?;
    let mut out = Tensor::zeros(grad_out.shape());
    let mut cols = vec![0.0; h * w];
    for plane in 0..n * c {
        let src = &grad_out.data()[plane * h * w..(plane + 1) * h * w];
        cols.fill(0.0);
        for iy in 0..h {
            let d = &mut cols[iy * w..(iy + 1) * w];
            for a in 0..up.rows.min(h - iy) {
                for (dv, gv) in d.iter_mut().zip(&src[(iy + a) * w..(iy + a + 1) * w]) {
                    *dv += gv;
                }
            }
        }
        let dst = &mut out.data_mut()[plane * h * w..(plane + 1) * h * w];
        for (d, crow) in dst.chunks_exact_mut(w).zip(cols.chunks_exact(w)) {
            for ix in 0..w {
                d[ix] = gain * crow[ix..(ix + up.cols).min(w)].iter().sum::<f64>();
            }
        }
    }
    Ok(out)
}

/// Approach-C effective kernels `H_c = P_c * H0` (full 2D convolution with
/// the `U_r x U_c` ones kernel). `p` is `(1, c, ph, pw)`.
pub fn effective_kernels(p: &Tensor, up: Upscale) -> Result<Tensor> {
    up.check()?;
    let (one, c, ph, pw) = p.dims4()?;
    let (kh, kw) = (ph + up.rows - 1, pw + up.cols - 1);
    let mut out = Tensor::zeros(&[one, c, kh, kw]);
    for ci in 0..one * c {
        for r in 0..ph {
            for s in 0..pw {
                let v = p.data()[(ci * ph + r) * pw + s];
                for a in 0..up.rows {
                    for b in 0..up.cols {
                        out.data_mut()[(ci * kh + r + a) * kw + s + b] += v;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Chain rule through [`effective_kernels`]: correlation of `H0` with the
/// gradient of the effective kernels.
pub fn effective_kernels_backward(grad_h: &Tensor, up: Upscale) -> Result<Tensor> {
    let (one, c, kh, kw) = grad_h.dims4()?;
    if kh < up.rows || kw < up.cols {
        return Err(Error::Dimension {
            axis: "height",
            expected: up.rows,
            got: kh,
        });
    }
    let (ph, pw) = (kh + 1 - up.rows, kw + 1 - up.cols);
    let mut out = Tensor::zeros(&[one, c, ph, pw]);
    for ci in 0..one * c {
        for r in 0..ph {
            for s in 0..pw {
                let mut acc = 0.0;
                for a in 0..up.rows {
                    for b in 0..up.cols {
                        acc += grad_h.data()[(ci * kh + r + a) * kw + s + b];
                    }
                }
                out.data_mut()[(ci * ph + r) * pw + s] = acc;
            }
        }
    }
    Ok(out)
}

/// Approach C: deconvolution whose learnable kernels are the quotients
/// `P_c`; the effective kernels always contain `H0`.
pub fn approach_c_deconv_forward(x: &Tensor, p: &Tensor, bias: f64, up: Upscale) -> Result<Tensor> {
    deconv_forward_polyphase(x, &effective_kernels(p, up)?, bias, up)
}

/// Gradients with `kernels` holding the gradient with respect to `P`.
pub fn approach_c_backward(x: &Tensor, p: &Tensor, up: Upscale, grad_out: &Tensor) -> Result<DeconvGrads> {
    let g = deconv_backward(x, &effective_kernels(p, up)?, up, grad_out)?;
    Ok(DeconvGrads {
        kernels: effective_kernels_backward(&g.kernels, up)?,
        ..g
    })
}

// ---------------------------------------------------------------------------
// layer object

/// A configured upsampling layer with its learnable weight and bias plus any
/// zero-order-hold stages appended after it.
#[derive(Clone, Debug, PartialEq)]
pub struct Upsampler {
    kind: UpsamplerKind,
    correction: Correction,
    upscale: Upscale,
    pub weight: Tensor,
    pub bias: Tensor,
    post_h0: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct UpsamplerGrads {
    pub x: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Upsampler {
    /// Expected weight shapes: deconv / approach C / resize `(1, c, k, k)`
    /// with one bias; sub-pixel `(phases, c, k, k)` with one bias per phase.
    pub fn new(
        kind: UpsamplerKind,
        correction: Correction,
        upscale: Upscale,
        weight: Tensor,
        bias: Tensor,
    ) -> Result<Self> {
        upscale.check()?;
        let (o, _, _, _) = weight.dims4()?;
        let phases = match kind {
            UpsamplerKind::Subpixel => upscale.phases(),
            _ => 1,
        };
        if o != phases {
            return Err(Error::Dimension {
                axis: "batch",
                expected: phases,
                got: o,
            });
        }
        if bias.len() != phases {
            return Err(Error::Dimension {
                axis: "bias",
                expected: phases,
                got: bias.len(),
            });
        }
        if correction == Correction::InsideH0 && kind != UpsamplerKind::Deconv {
            return Err(Error::Config(
                "inside_h0 (approach C) is applicable to only deconvolution layers".into(),
            ));
        }
        let post_h0 = if correction == Correction::PostH0 { vec![1.0] } else { Vec::new() };
        Ok(Upsampler {
            kind,
            correction,
            upscale,
            weight,
            bias,
            post_h0,
        })
    }

    /// He (fan-in) initialisation with zero biases for a 2D layer.
    pub fn he_init<R: Rng>(spec: &UpsamplerSpec, in_channels: usize, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let k = spec.kernel_size;
        let up = Upscale::d2(spec.factor);
        let out = match spec.kind {
            UpsamplerKind::Subpixel => up.phases(),
            _ => 1,
        };
        let weight = he_normal(&[out, in_channels, k, k], rng);
        Upsampler::new(spec.kind, spec.correction, up, weight, Tensor::zeros(&[out]))
    }

    pub fn kind(&self) -> UpsamplerKind {
        self.kind
    }

    pub fn correction(&self) -> Correction {
        self.correction
    }

    pub fn upscale(&self) -> Upscale {
        self.upscale
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Gains of the `H0` stages applied after the layer, in order.
    pub fn post_h0(&self) -> &[f64] {
        &self.post_h0
    }

    pub fn push_post_h0(&mut self, gain: f64) {
        self.post_h0.push(gain);
    }

    /// True when the structure guarantees equal steady-state phases.
    pub fn is_corrected(&self) -> bool {
        self.correction == Correction::InsideH0 || !self.post_h0.is_empty()
    }

    /// Kernels actually applied by a deconvolution-type layer.
    pub fn deconv_kernels(&self) -> Result<Option<Tensor>> {
        match (self.kind, self.correction) {
            (UpsamplerKind::Deconv, Correction::InsideH0) => effective_kernels(&self.weight, self.upscale).map(Some),
            (UpsamplerKind::Deconv, _) => Ok(Some(self.weight.clone())),
            _ => Ok(None),
        }
    }

    fn core_forward(&self, x: &Tensor) -> Result<Tensor> {
        let up = self.upscale;
        let b = self.bias.data();
        match (self.kind, self.correction) {
            (UpsamplerKind::Deconv, Correction::InsideH0) => approach_c_deconv_forward(x, &self.weight, b[0], up),
            (UpsamplerKind::Deconv, _) => deconv_forward_polyphase(x, &self.weight, b[0], up),
            (UpsamplerKind::Subpixel, _) => subpixel_forward(x, &self.weight, b, up),
            (UpsamplerKind::ResizeConv, _) => resize_conv_forward(x, &self.weight, b[0], up),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.core_forward(x)?;
        for &gain in &self.post_h0 {
            y = h0_postfilter_scaled(&y, self.upscale, gain)?;
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<UpsamplerGrads> {
        let up = self.upscale;
        let mut g = grad_out.clone();
        for &gain in self.post_h0.iter().rev() {
            g = h0_postfilter_backward(&g, up, gain)?;
        }
        let (gx, gw, gb) = match (self.kind, self.correction) {
            (UpsamplerKind::Deconv, Correction::InsideH0) => {
                let r = approach_c_backward(x, &self.weight, up, &g)?;
                (r.x, r.kernels, vec![r.bias])
            }
            (UpsamplerKind::Deconv, _) => {
                let r = deconv_backward(x, &self.weight, up, &g)?;
                (r.x, r.kernels, vec![r.bias])
            }
            (UpsamplerKind::Subpixel, _) => {
                let r = subpixel_backward(x, &self.weight, up, &g)?;
                (r.x, r.kernels, r.biases)
            }
            (UpsamplerKind::ResizeConv, _) => {
                let r = resize_conv_backward(x, &self.weight, up, &g)?;
                (r.x, r.kernel, vec![r.bias])
            }
        };
        Ok(UpsamplerGrads {
            x: gx,
            weight: gw,
            bias: Tensor::new(vec![gb.len()], gb)?,
        })
    }

    /// Steady-state value of every output phase when input channel `c` is
    /// held at the constant `a[c]`: `Σ_c a_c · dc(R_{c,n}) + b_n`, followed by
    /// any `H0` stages (each maps all phases to `gain · Σ_n value_n`).
    pub fn predict_phases(&self, a: &[f64]) -> Result<Vec<f64>> {
        let up = self.upscale;
        let c = self.in_channels();
        if a.len() != c {
            return Err(Error::Dimension {
                axis: "channels",
                expected: c,
                got: a.len(),
            });
        }
        let b = self.bias.data();
        let mut phases = match self.kind {
            UpsamplerKind::Deconv => {
                let k = self.deconv_kernels()?.expect("deconv kernels");
                let (_, _, kh, kw) = k.dims4()?;
                let mut v = vec![0.0; up.phases()];
                let mut sums = vec![0.0; up.phases()];
                for (ci, &ac) in a.iter().enumerate() {
                    sums.fill(0.0);
                    for ky in 0..kh {
                        for kx in 0..kw {
                            sums[(ky % up.rows) * up.cols + kx % up.cols] += k.data()[(ci * kh + ky) * kw + kx];
                        }
                    }
                    for (vi, s) in v.iter_mut().zip(&sums) {
                        *vi += ac * s;
                    }
                }
                v.into_iter().map(|vi| vi + b[0]).collect()
            }
            UpsamplerKind::Subpixel => {
                let (p, _, kh, kw) = self.weight.dims4()?;
                (0..p)
                    .map(|n| {
                        let mut acc = 0.0;
                        for (ci, &ac) in a.iter().enumerate() {
                            let start = (n * c + ci) * kh * kw;
                            acc += ac * self.weight.data()[start..start + kh * kw].iter().sum::<f64>();
                        }
                        acc + b[n]
                    })
                    .collect()
            }
            UpsamplerKind::ResizeConv => {
                let (_, _, kh, kw) = self.weight.dims4()?;
                let mut acc = 0.0;
                for (ci, &ac) in a.iter().enumerate() {
                    acc += ac * self.weight.data()[ci * kh * kw..(ci + 1) * kh * kw].iter().sum::<f64>();
                }
                vec![acc + b[0]; up.phases()]
            }
        };
        for &gain in &self.post_h0 {
            let total: f64 = phases.iter().sum();
            phases = vec![gain * total; up.phases()];
        }
        Ok(phases)
    }

    /// Extent of the layer's impulse response in output samples (largest axis).
    pub fn receptive_field(&self) -> usize {
        let up = self.upscale;
        let (_, _, kh, kw) = self.weight.dims4().expect("rank-4 weight");
        let u = up.rows.max(up.cols);
        let k = kh.max(kw);
        let core = match (self.kind, self.correction) {
            (UpsamplerKind::Deconv, Correction::InsideH0) => k + u - 1,
            (UpsamplerKind::Deconv, _) => k,
            (UpsamplerKind::Subpixel, _) => k * u,
            (UpsamplerKind::ResizeConv, _) => k + u,
        };
        core + self.post_h0.len() * (u - 1)
    }
}

/// `N(0, 2 / fan_in)` samples with `fan_in = in_channels * kh * kw`.
pub(crate) fn he_normal<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect()).expect("shape")
}

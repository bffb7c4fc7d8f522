use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Padding {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    /// Padding that keeps the spatial size for a stride-1 `kh x kw` kernel.
    /// Even kernels put the extra sample on the bottom/right.
    pub fn same(kh: usize, kw: usize) -> Self {
        Padding {
            top: kh / 2,
            bottom: kh - 1 - kh / 2,
            left: kw / 2,
            right: kw - 1 - kw / 2,
        }
    }
}

/// Stride and zero padding of a 2D cross-correlation. The kernel shape
/// `(out_channels, in_channels, kh, kw)` comes from the weight tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: (usize, usize),
    pub padding: Padding,
}

impl Default for ConvParams {
    fn default() -> Self {
        ConvParams {
            stride: (1, 1),
            padding: Padding::default(),
        }
    }
}

impl ConvParams {
    pub fn same(kh: usize, kw: usize) -> Self {
        ConvParams {
            stride: (1, 1),
            padding: Padding::same(kh, kw),
        }
    }

    pub fn with_stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = (sh, sw);
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    /// `floor((in + pad_total - k) / stride) + 1` per axis.
    pub fn output_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> Result<(usize, usize)> {
        let (sh, sw) = self.stride;
        if sh == 0 || sw == 0 {
            return Err(Error::param("stride", "must be positive"));
        }
        let ph = h + self.padding.top + self.padding.bottom;
        let pw = w + self.padding.left + self.padding.right;
        if ph < kh {
            return Err(Error::Dimension {
                axis: "height",
                expected: kh,
                got: ph,
            });
        }
        if pw < kw {
            return Err(Error::Dimension {
                axis: "width",
                expected: kw,
                got: pw,
            });
        }
        Ok(((ph - kh) / sh + 1, (pw - kw) / sw + 1))
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    p: ConvParams,
}

impl Geometry {
    fn new(x: &Tensor, w: &Tensor, p: &ConvParams) -> Result<(usize, Self)> {
        let (n, c, h, wd) = x.dims4()?;
        let (o, wc, kh, kw) = w.dims4()?;
        if wc != c {
            return Err(Error::Dimension {
                axis: "channels",
                expected: wc,
                got: c,
            });
        }
        let (oh, ow) = p.output_size(h, wd, kh, kw)?;
        Ok((
            n,
            Geometry {
                c,
                h,
                w: wd,
                o,
                kh,
                kw,
                oh,
                ow,
                p: *p,
            },
        ))
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Gathers every receptive field of one sample into a
    /// `(c*kh*kw) x (oh*ow)` row-major matrix.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (sh, sw) = self.p.stride;
        let (pt, pl) = (self.p.padding.top as isize, self.p.padding.left as isize);
        let npos = self.positions();
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * npos..(row + 1) * npos];
                    for oy in 0..self.oh {
                        let iy = (oy * sh + ky) as isize - pt;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * sw + kx) as isize - pl;
                            *v = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], gx: &mut [f64]) {
        let (sh, sw) = self.p.stride;
        let (pt, pl) = (self.p.padding.top as isize, self.p.padding.left as isize);
        let npos = self.positions();
        for c in 0..self.c {
            let plane = &mut gx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * npos..(row + 1) * npos];
                    for oy in 0..self.oh {
                        let iy = (oy * sh + ky) as isize - pt;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let line = &src[oy * self.ow..(oy + 1) * self.ow];
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, &g) in line.iter().enumerate() {
                            let ix = (ox * sw + kx) as isize - pl;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c (m x n) += a (m x k) * b (k x n)` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides describe matrices that lie entirely inside the given
    // slices; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Batched 2D cross-correlation (no kernel flip) with per-output-channel
/// bias. `x` is `(n, c, h, w)`, `w` is `(o, c, kh, kw)`, `bias` has `o`
/// entries.
pub fn conv_forward(x: &Tensor, w: &Tensor, bias: &[f64], p: &ConvParams) -> Result<Tensor> {
    let (n, g) = Geometry::new(x, w, p)?;
    if bias.len() != g.o {
        return Err(Error::Dimension {
            axis: "bias",
            expected: g.o,
            got: bias.len(),
        });
    }
    let in_len = g.c * g.h * g.w;
    let out_len = g.o * g.positions();
    let mut out = vec![0.0; n * out_len];
    out.par_chunks_mut(out_len)
        .zip(x.data().par_chunks(in_len))
        .for_each(|(dst, src)| {
            let npos = g.positions();
            let kdim = g.patch_len();
            let mut cols = vec![0.0; kdim * npos];
            g.im2col(src, &mut cols);
            for (o, row) in dst.chunks_mut(npos).enumerate() {
                row.fill(bias[o]);
            }
            gemm_acc(
                g.o,
                kdim,
                npos,
                w.data(),
                (kdim as isize, 1),
                &cols,
                (npos as isize, 1),
                dst,
            );
        });
    Tensor::new(vec![n, g.o, g.oh, g.ow], out)
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub x: Tensor,
    pub w: Tensor,
    pub b: Vec<f64>,
}

/// Gradients of `sum(grad_out * conv_forward(x, w, b, p))` with respect to
/// `x`, `w` and `b`. Batch contributions are reduced in batch order.
pub fn conv_backward(x: &Tensor, w: &Tensor, p: &ConvParams, grad_out: &Tensor) -> Result<ConvGrads> {
    let (gx, gw, gb) = conv_backward_impl(x, w, p, grad_out, true)?;
    Ok(ConvGrads {
        x: gx.expect("input gradient requested"),
        w: gw,
        b: gb,
    })
}

/// Same as [`conv_backward`] but skips the input gradient, which the first
/// layer of a network never needs.
pub(crate) fn conv_backward_params(
    x: &Tensor,
    w: &Tensor,
    p: &ConvParams,
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<f64>)> {
    let (_, gw, gb) = conv_backward_impl(x, w, p, grad_out, false)?;
    Ok((gw, gb))
}

type BackwardParts = (Option<Tensor>, Tensor, Vec<f64>);

fn conv_backward_impl(
    x: &Tensor,
    w: &Tensor,
    p: &ConvParams,
    grad_out: &Tensor,
    want_x: bool,
) -> Result<BackwardParts> {
    let (n, g) = Geometry::new(x, w, p)?;
    let expected = [n, g.o, g.oh, g.ow];
    let got = grad_out.dims4()?;
    for (axis, (e, a)) in expected
        .iter()
        .zip([got.0, got.1, got.2, got.3])
        .enumerate()
    {
        if *e != a {
            return Err(Error::Dimension {
                axis: super::axis_name(axis, 4),
                expected: *e,
                got: a,
            });
        }
    }
    let npos = g.positions();
    let kdim = g.patch_len();
    let in_len = g.c * g.h * g.w;
    let out_len = g.o * npos;

    let per_sample: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = x
        .data()
        .par_chunks(in_len)
        .zip(grad_out.data().par_chunks(out_len))
        .map(|(src, gout)| {
            let mut cols = vec![0.0; kdim * npos];
            g.im2col(src, &mut cols);
            let mut gw = vec![0.0; g.o * kdim];
            gemm_acc(
                g.o,
                npos,
                kdim,
                gout,
                (npos as isize, 1),
                &cols,
                (1, npos as isize),
                &mut gw,
            );
            let gb: Vec<f64> = gout.chunks(npos).map(|r| r.iter().sum()).collect();
            let mut gx = Vec::new();
            if want_x {
                let mut dcols = vec![0.0; kdim * npos];
                gemm_acc(
                    kdim,
                    g.o,
                    npos,
                    w.data(),
                    (1, kdim as isize),
                    gout,
                    (npos as isize, 1),
                    &mut dcols,
                );
                gx = vec![0.0; in_len];
                g.col2im(&dcols, &mut gx);
            }
            (gx, gw, gb)
        })
        .collect();

    let mut gw = vec![0.0; g.o * kdim];
    let mut gb = vec![0.0; g.o];
    let mut gx = Vec::with_capacity(if want_x { n * in_len } else { 0 });
    for (sx, sw, sb) in per_sample {
        for (a, b) in gw.iter_mut().zip(&sw) {
            *a += b;
        }
        for (a, b) in gb.iter_mut().zip(&sb) {
            *a += b;
        }
        gx.extend_from_slice(&sx);
    }
    let gx = if want_x {
        Some(Tensor::new(x.shape().to_vec(), gx)?)
    } else {
        None
    };
    Ok((gx, Tensor::new(w.shape().to_vec(), gw)?, gb))
}

//! Step-response analysis: feed a constant input through a layer or network,
//! measure the periodic steady state of each output phase and compare it
//! with the value predicted from the weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multirate::Dims;
use crate::tensor::Tensor;
use crate::upsample::{Upsampler, Upscale};

/// Default tolerance for "all phases equal".
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Anything whose response to a constant input can be simulated.
pub trait StepResponse {
    fn upscale(&self) -> Upscale;
    fn input_channels(&self) -> usize;
    /// Extent of the impulse response in output samples.
    fn receptive_field(&self) -> usize;
    fn respond(&self, x: &Tensor) -> Result<Tensor>;
    /// Analytic steady-state phase values for the constant input `x`, when
    /// the structure admits a closed form.
    fn predict(&self, _x: &Tensor) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }
}

impl StepResponse for Upsampler {
    fn upscale(&self) -> Upscale {
        Upsampler::upscale(self)
    }

    fn input_channels(&self) -> usize {
        self.in_channels()
    }

    fn receptive_field(&self) -> usize {
        Upsampler::receptive_field(self)
    }

    fn respond(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }

    fn predict(&self, x: &Tensor) -> Result<Option<Vec<f64>>> {
        let (_, c, h, w) = x.dims4()?;
        let a: Vec<f64> = (0..c).map(|ci| x.data()[ci * h * w]).collect();
        self.predict_phases(&a).map(Some)
    }
}

/// All-ones input over the analysed window: `(1, 1, 1, size)` in 1D,
/// `(1, 1, size, size)` in 2D.
pub fn unit_step(size: usize, dims: Dims) -> Tensor {
    match dims {
        Dims::One => Tensor::ones(&[1, 1, 1, size.max(1)]),
        Dims::Two => Tensor::ones(&[1, 1, size.max(1), size.max(1)]),
    }
}

fn step_input(channels: usize, size: usize, up: Upscale, level: f64) -> Tensor {
    let h = if up.rows > 1 { size } else { 1 };
    Tensor::full(&[1, channels, h, size], level)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseStats {
    /// Mean of each residue class, indexed `row_phase * U_cols + col_phase`.
    pub values: Vec<f64>,
    /// Population standard deviation within each residue class.
    pub std: Vec<f64>,
    pub samples: usize,
}

/// Per-phase means over the interior of a single-plane output, discarding
/// `margin` samples at both ends of every upsampled axis. Residues are taken
/// from absolute sample positions.
pub fn steady_state_phases(y: &Tensor, up: Upscale, margin: usize) -> Result<PhaseStats> {
    let (h, w) = y.plane_dims()?;
    if up.rows == 0 || up.cols == 0 {
        return Err(Error::param("U", "upscaling factor must be at least 1"));
    }
    let (my, mx) = (if up.rows > 1 { margin } else { 0 }, if up.cols > 1 { margin } else { 0 });
    let short = |len: usize, m: usize, u: usize| len < 2 * m + u;
    if short(h, my, up.rows) || short(w, mx, up.cols) {
        return Err(Error::InputTooSmall {
            required: 2 * margin + up.rows.max(up.cols),
            got: if short(w, mx, up.cols) { w } else { h },
        });
    }
    let p = up.phases();
    let mut sum = vec![0.0; p];
    let mut count = vec![0usize; p];
    for oy in my..h - my {
        for ox in mx..w - mx {
            let k = up.phase_of(oy, ox);
            sum[k] += y.data()[oy * w + ox];
            count[k] += 1;
        }
    }
    let values: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    let mut var = vec![0.0; p];
    for oy in my..h - my {
        for ox in mx..w - mx {
            let k = up.phase_of(oy, ox);
            let d = y.data()[oy * w + ox] - values[k];
            var[k] += d * d;
        }
    }
    Ok(PhaseStats {
        std: var.iter().zip(&count).map(|(v, &c)| (v / c as f64).sqrt()).collect(),
        values,
        samples: count.iter().sum(),
    })
}

/// Peak-to-peak spread of the phase values.
pub fn checkerboard_score(phases: &[f64]) -> f64 {
    let max = phases.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = phases.iter().cloned().fold(f64::INFINITY, f64::min);
    if phases.is_empty() {
        0.0
    } else {
        max - min
    }
}

/// `f_n = Σ_c A_c · dc(R_{c,n}) + b_n` for every phase `n`, where `kernels`
/// is `(phases, c, kh, kw)` (sub-pixel layout).
pub fn predict_subpixel_steady_state(a: &[f64], kernels: &Tensor, biases: &[f64]) -> Result<Vec<f64>> {
    let (p, c, kh, kw) = kernels.dims4()?;
    if a.len() != c {
        return Err(Error::Dimension {
            axis: "channels",
            expected: c,
            got: a.len(),
        });
    }
    if biases.len() != p {
        return Err(Error::Dimension {
            axis: "phases",
            expected: p,
            got: biases.len(),
        });
    }
    if a.iter().any(|&v| v < 0.0) {
        log::warn!("negative steady-state input; post-ReLU values should be non-negative");
    }
    Ok((0..p)
        .map(|n| {
            let mut acc = 0.0;
            for (ci, &ac) in a.iter().enumerate() {
                let start = (n * c + ci) * kh * kw;
                acc += ac * kernels.data()[start..start + kh * kw].iter().sum::<f64>();
            }
            acc + biases[n]
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResponseReport {
    #[serde(rename = "U")]
    pub factor: usize,
    pub phase_values: Vec<f64>,
    pub score: f64,
    pub predicted: Option<Vec<f64>>,
    pub prediction_error: Option<f64>,
    /// Largest within-phase standard deviation of the measured interior.
    pub max_phase_std: f64,
    pub input_size: usize,
    pub level: f64,
    pub margin: usize,
    pub tolerance_used: f64,
}

impl StepResponseReport {
    pub fn artifact_free(&self) -> bool {
        self.score <= self.tolerance_used
    }
}

/// Output samples discarded at each border: half the receptive field plus
/// one period.
pub fn step_margin(net: &impl StepResponse) -> usize {
    let up = net.upscale();
    net.receptive_field().div_ceil(2) + up.rows.max(up.cols)
}

/// Smallest input size (per axis, input samples) that leaves at least one
/// full period after discarding the margins.
pub fn minimum_input_size(net: &impl StepResponse) -> usize {
    let up = net.upscale();
    let u = up.rows.max(up.cols);
    (2 * step_margin(net) + u).div_ceil(u)
}

/// Runs a constant input of value `level` (every channel) through `net` and
/// reports the steady state of each output phase.
pub fn network_step_report(
    net: &impl StepResponse,
    input_size: usize,
    level: f64,
    tolerance: f64,
) -> Result<StepResponseReport> {
    let up = net.upscale();
    let required = minimum_input_size(net);
    if input_size < required {
        return Err(Error::InputTooSmall {
            required,
            got: input_size,
        });
    }
    let margin = step_margin(net);
    let x = step_input(net.input_channels(), input_size, up, level);
    let y = net.respond(&x)?;
    if !y.is_finite() {
        return Err(Error::NonFinite("step response"));
    }
    let stats = steady_state_phases(&y, up, margin)?;
    let max_phase_std = stats.std.iter().cloned().fold(0.0, f64::max);
    let scale = stats.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if let Some((phase, &std)) = stats.std.iter().enumerate().find(|(_, &s)| s > 1e-9 * scale) {
        return Err(Error::NotSteady { phase, std });
    }
    let predicted = net.predict(&x)?;
    let prediction_error = predicted.as_ref().map(|p| {
        p.iter()
            .zip(&stats.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    });
    Ok(StepResponseReport {
        factor: up.rows.max(up.cols),
        score: checkerboard_score(&stats.values),
        phase_values: stats.values,
        predicted,
        prediction_error,
        max_phase_std,
        input_size,
        level,
        margin,
        tolerance_used: tolerance,
    })
}

/// Local checkerboard strength of an image plane. The image minus its
/// sliding `U x U` mean is split into residue classes over a window of 5x5
/// cells around each `U x U` cell; the map holds the standard deviation of
/// the class means, constant within a cell.
pub fn checkerboard_map(image: &Tensor, u: usize) -> Result<Tensor> {
    if u == 0 {
        return Err(Error::param("U", "factor must be at least 1"));
    }
    let (h, w) = image.plane_dims()?;
    let img = image.data();
    if u == 1 {
        return Tensor::new(vec![h, w], vec![0.0; h * w]);
    }
    // sliding box mean via a summed-area table
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += img[y * w + x];
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let half = u / 2;
    let mut resid = vec![0.0; h * w];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(half), (y + u - half).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(half), (x + u - half).min(w));
            let s = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0] + sat[y0 * (w + 1) + x0];
            resid[y * w + x] = img[y * w + x] - s / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }

    const CELLS: usize = 2;
    let (th, tw) = (h.div_ceil(u), w.div_ceil(u));
    let mut map = vec![0.0; h * w];
    let mut sum = vec![0.0; u * u];
    let mut count = vec![0usize; u * u];
    for ty in 0..th {
        for tx in 0..tw {
            sum.fill(0.0);
            count.fill(0);
            let ya = ty.saturating_sub(CELLS) * u;
            let yb = ((ty + CELLS + 1) * u).min(h);
            let xa = tx.saturating_sub(CELLS) * u;
            let xb = ((tx + CELLS + 1) * u).min(w);
            for y in ya..yb {
                for x in xa..xb {
                    let k = (y % u) * u + x % u;
                    sum[k] += resid[y * w + x];
                    count[k] += 1;
                }
            }
            let means: Vec<f64> = sum
                .iter()
                .zip(&count)
                .filter(|(_, &c)| c > 0)
                .map(|(s, &c)| s / c as f64)
                .collect();
            let mu = means.iter().sum::<f64>() / means.len() as f64;
            let sd = (means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / means.len() as f64).sqrt();
            for y in ty * u..((ty + 1) * u).min(h) {
                for x in tx * u..((tx + 1) * u).min(w) {
                    map[y * w + x] = sd;
                }
            }
        }
    }
    Tensor::new(vec![h, w], map)
}

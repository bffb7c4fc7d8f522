use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use checkerfree::analysis::DEFAULT_TOLERANCE;
use checkerfree::multirate::{
    factor_out_h0, satisfies_avoidance_condition, zero_order_hold_kernel, Dims, Factorization,
    Filter,
};
use checkerfree::srnet::{load_checkpoint, sidecar_path};
use checkerfree::tensor::{read_tensors, Tensor};
use checkerfree::upsample::{Upsampler, UpsamplerKind};
use serde::Serialize;
use serde_json::json;

use crate::args::Cli;
use crate::error::{CliError, Result};
use crate::{require, Outcome};

#[derive(Debug, Serialize)]
pub struct ChannelLint {
    pub channel: usize,
    pub dc: Vec<f64>,
    pub mean_dc: f64,
    pub max_deviation: f64,
    pub satisfied: bool,
    /// "exact" or "none"
    pub h0_factor: &'static str,
    pub quotient_shape: Option<[usize; 2]>,
    pub max_remainder: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct LintReport {
    pub source: String,
    #[serde(rename = "U")]
    pub factor: usize,
    pub tolerance: f64,
    pub layer: String,
    pub channels: Vec<ChannelLint>,
    /// Spread of per-phase biases that are not averaged by an H0 stage.
    pub bias_spread: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

struct Kernels {
    layer: String,
    factor: usize,
    filters: Vec<Filter>,
    biases: Vec<f64>,
}

fn plane_filter(t: &Tensor, offset: usize, kh: usize, kw: usize) -> Result<Filter> {
    let taps = t.data()[offset..offset + kh * kw].to_vec();
    Ok(if kh == 1 {
        Filter::new_1d(taps)?
    } else {
        Filter::new_2d(kh, kw, taps)?
    })
}

fn scaled(f: &Filter, gain: f64) -> Result<Filter> {
    let taps = f.taps().iter().map(|v| v * gain).collect();
    Ok(match f.dims() {
        Dims::One => Filter::new_1d(taps)?,
        Dims::Two => Filter::new_2d(f.rows(), f.cols(), taps)?,
    })
}

/// Equivalent single-kernel interpolator of every input channel, including
/// any H0 stages after the layer.
fn upsampler_kernels(up: &Upsampler) -> Result<Kernels> {
    let u = up.upscale().rows.max(up.upscale().cols);
    let (o, c, kh, kw) = up.weight.dims4()?;
    let mut filters = Vec::with_capacity(c);
    let mut biases = up.bias.data().to_vec();
    for ci in 0..c {
        let f = match up.kind() {
            UpsamplerKind::Deconv => {
                let k = up.deconv_kernels()?.expect("deconv kernels");
                let (_, _, eh, ew) = k.dims4()?;
                plane_filter(&k, ci * eh * ew, eh, ew)?
            }
            UpsamplerKind::ResizeConv => {
                plane_filter(&up.weight, ci * kh * kw, kh, kw)?.convolve(&zero_order_hold_kernel(u, Dims::Two)?)?
            }
            UpsamplerKind::Subpixel => {
                // interleave the phase kernels; tap t of phase r sits at U*(T-1-t) + r
                let (hh, ww) = (u * kh, u * kw);
                let mut taps = vec![0.0; hh * ww];
                for n in 0..o {
                    let (ry, rx) = (n / u, n % u);
                    for ty in 0..kh {
                        for tx in 0..kw {
                            let v = up.weight.data()[((n * c + ci) * kh + ty) * kw + tx];
                            taps[(u * (kh - 1 - ty) + ry) * ww + u * (kw - 1 - tx) + rx] = v;
                        }
                    }
                }
                Filter::new_2d(hh, ww, taps)?
            }
        };
        filters.push(f);
    }
    for &gain in up.post_h0() {
        let h0 = zero_order_hold_kernel(u, Dims::Two)?;
        filters = filters
            .iter()
            .map(|f| scaled(&f.convolve(&h0)?, gain))
            .collect::<Result<Vec<_>>>()?;
        let total: f64 = biases.iter().sum();
        biases = vec![gain * total * (u * u) as f64 / biases.len() as f64];
    }
    let layer = format!("{:?}/{:?}", up.kind(), up.correction()).to_lowercase();
    Ok(Kernels {
        layer,
        factor: u,
        filters,
        biases,
    })
}

fn bare_kernels(path: &Path, factor: Option<usize>) -> Result<Kernels> {
    let u = factor.ok_or_else(|| CliError::usage("--factor is required for a bare tensor file"))?;
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let tensors = read_tensors(BufReader::new(file))?;
    let t = tensors
        .first()
        .ok_or_else(|| CliError::usage(format!("{}: no tensors in file", path.display())))?;
    let s = t.shape();
    let (c, kh, kw) = match *s {
        [k] => (1, 1, k),
        [kh, kw] => (1, kh, kw),
        [c, kh, kw] => (c, kh, kw),
        [1, c, kh, kw] => (c, kh, kw),
        _ => {
            return Err(CliError::usage(format!(
                "{}: expected kernels shaped (k), (kh, kw), (c, kh, kw) or (1, c, kh, kw), got {s:?}",
                path.display()
            )))
        }
    };
    let filters = (0..c)
        .map(|ci| plane_filter(t, ci * kh * kw, kh, kw))
        .collect::<Result<Vec<_>>>()?;
    Ok(Kernels {
        layer: "kernel".into(),
        factor: u,
        filters,
        biases: Vec::new(),
    })
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let path = require(&cli.weights, "weights")?;
    let tol = cli.tol.unwrap_or(DEFAULT_TOLERANCE);
    if !(tol >= 0.0) {
        return Err(CliError::usage("--tol must be non-negative"));
    }
    let from_checkpoint = sidecar_path(path).exists();
    let k = if from_checkpoint {
        let net = load_checkpoint(path)?;
        if cli.factor.is_some_and(|u| u != net.factor()) {
            return Err(CliError::usage(format!("--factor does not match the checkpoint (U = {})", net.factor())));
        }
        let mut up = net.upsampler.clone();
        for &g in net.approach_a_gains() {
            up.push_post_h0(g);
        }
        upsampler_kernels(&up)?
    } else {
        bare_kernels(path, cli.factor)?
    };
    let u = k.factor;
    let mut report = LintReport {
        source: path.display().to_string(),
        factor: u,
        tolerance: tol,
        layer: k.layer,
        channels: Vec::new(),
        bias_spread: 0.0,
        pass: true,
        note: None,
    };
    if u == 1 {
        report.note = Some("no constraint".into());
        let summary = "U = 1: no constraint, pass".to_string();
        let mut o = Outcome::new(true, &report, summary)?;
        o.config = json!({ "weights": path, "U": 1, "tol": tol });
        return Ok(o);
    }
    for (ci, f) in k.filters.iter().enumerate() {
        let cond = satisfies_avoidance_condition(f, u, tol)?;
        let (h0_factor, quotient_shape, max_remainder) = match factor_out_h0(f, u, tol)? {
            Factorization::Exact(p) => ("exact", Some([p.rows(), p.cols()]), None),
            Factorization::NoExactFactor { max_remainder } => ("none", None, Some(max_remainder)),
        };
        report.channels.push(ChannelLint {
            channel: ci,
            dc: cond.dc,
            mean_dc: cond.mean_dc,
            max_deviation: cond.max_deviation,
            satisfied: cond.satisfied,
            h0_factor,
            quotient_shape,
            max_remainder,
        });
    }
    if let (Some(lo), Some(hi)) = (
        k.biases.iter().cloned().reduce(f64::min),
        k.biases.iter().cloned().reduce(f64::max),
    ) {
        report.bias_spread = hi - lo;
    }
    report.pass = report.channels.iter().all(|c| c.satisfied) && report.bias_spread <= tol;

    let failing = report.channels.iter().filter(|c| !c.satisfied).count();
    let worst = report.channels.iter().map(|c| c.max_deviation).fold(0.0, f64::max);
    let mut summary = format!(
        "{} ({}, U = {u}): {} of {} channels satisfy equal DC (worst deviation {worst:.3e}, tol {tol:.1e})",
        report.source,
        report.layer,
        report.channels.len() - failing,
        report.channels.len()
    );
    if report.bias_spread > 0.0 {
        summary += &format!("\nphase bias spread {:.3e}", report.bias_spread);
    }
    summary += if report.pass { "\npass" } else { "\nFAIL" };
    let pass = report.pass;
    let mut o = Outcome::new(pass, &report, summary)?;
    o.config = json!({ "weights": path, "U": u, "tol": tol, "checkpoint": from_checkpoint });
    Ok(o)
}

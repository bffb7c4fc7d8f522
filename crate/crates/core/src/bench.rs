//! Inference timing of the network variants over a set of input sizes.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::srnet::{NetworkConfig, SrNet};
use crate::tensor::Tensor;

/// Input sizes as `(width, height)`.
pub const TABLE_SIZES: [(usize, usize); 5] = [(69, 69), (125, 90), (128, 128), (132, 164), (180, 144)];

pub const DECONV: &str = "Deconv";
pub const DECONV_H0_AB: &str = "Deconv+H0 (A/B)";
pub const DECONV_H0_C: &str = "Deconv+H0 (C)";
pub const SUBPIXEL: &str = "Sub-pixel";
pub const SUBPIXEL_H0_AB: &str = "Sub-pixel+H0 (A/B)";
pub const RESIZE_CONV: &str = "ResizeConv";

/// The timed rows. A and B share one entry: at inference both are the
/// upsampler followed by one `H0` stage.
pub fn standard_networks(factor: usize) -> Result<Vec<(String, NetworkConfig)>> {
    [
        (DECONV, "deconv"),
        (DECONV_H0_AB, "deconv_h0_b"),
        (DECONV_H0_C, "deconv_h0_c"),
        (SUBPIXEL, "subpixel"),
        (SUBPIXEL_H0_AB, "subpixel_h0_b"),
        (RESIZE_CONV, "resize_conv"),
    ]
    .iter()
    .map(|&(label, preset)| Ok((label.to_string(), NetworkConfig::preset(preset, factor)?)))
    .collect()
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub networks: Vec<(String, NetworkConfig)>,
    pub sizes: Vec<(usize, usize)>,
    pub repeats: usize,
    pub threads: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub network: String,
    pub width: usize,
    pub height: usize,
    pub median_seconds: f64,
    pub samples: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub width: usize,
    pub height: usize,
    pub claim: String,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub orderings: Vec<OrderingCheck>,
    pub total_seconds: f64,
}

impl BenchReport {
    pub fn median(&self, network: &str, size: (usize, usize)) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.network == network && (r.width, r.height) == size)
            .map(|r| r.median_seconds)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("network,width,height,median_seconds,repeats\n");
        for r in &self.rows {
            s += &format!(
                "{},{},{},{:.6e},{}\n",
                r.network,
                r.width,
                r.height,
                r.median_seconds,
                r.samples.len()
            );
        }
        s
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Times every network at every size. Repeats are interleaved round-robin
/// across networks so slow drifts in machine load hit all rows alike.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.repeats < 3 {
        return Err(Error::param("repeats", "at least 3 repeats are needed for a median"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let start = Instant::now();
        let nets = cfg
            .networks
            .iter()
            .map(|(label, c)| SrNet::init(c).map(|n| (label.clone(), n)))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut rows = Vec::new();
        for &(w, h) in &cfg.sizes {
            let x = Tensor::new(vec![1, 1, h, w], (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect())?;
            for (_, net) in &nets {
                net.forward(&x)?;
            }
            let mut samples = vec![Vec::with_capacity(cfg.repeats); nets.len()];
            for _ in 0..cfg.repeats {
                for (i, (_, net)) in nets.iter().enumerate() {
                    let t = Instant::now();
                    let y = net.forward(&x)?;
                    samples[i].push(t.elapsed().as_secs_f64());
                    std::hint::black_box(y);
                }
            }
            for ((label, _), s) in nets.iter().zip(samples) {
                log::info!("{label} {w}x{h}: {:.4} s", median(&s));
                rows.push(BenchRow {
                    network: label.clone(),
                    width: w,
                    height: h,
                    median_seconds: median(&s),
                    samples: s,
                });
            }
        }
        let mut report = BenchReport {
            rows,
            orderings: Vec::new(),
            total_seconds: 0.0,
        };
        report.orderings = ordering_checks(&report, &cfg.sizes);
        report.total_seconds = start.elapsed().as_secs_f64();
        Ok(report)
    })
}

/// The expected cost ordering at each size, for rows that are present.
pub fn ordering_checks(report: &BenchReport, sizes: &[(usize, usize)]) -> Vec<OrderingCheck> {
    let mut out = Vec::new();
    for &size in sizes {
        let t = |n: &str| report.median(n, size);
        let mut push = |claim: String, holds: Option<bool>| {
            if let Some(holds) = holds {
                out.push(OrderingCheck {
                    width: size.0,
                    height: size.1,
                    claim,
                    holds,
                });
            }
        };
        let less = |a: &str, b: &str| Some(t(a)? < t(b)?);
        let at_most = |a: &str, b: &str| Some(t(a)? <= t(b)?);
        push(format!("{DECONV} < {DECONV_H0_AB}"), less(DECONV, DECONV_H0_AB));
        push(format!("{DECONV} < {DECONV_H0_C}"), less(DECONV, DECONV_H0_C));
        push(format!("{SUBPIXEL} < {SUBPIXEL_H0_AB}"), less(SUBPIXEL, SUBPIXEL_H0_AB));
        push(format!("{DECONV_H0_C} <= {DECONV_H0_AB}"), at_most(DECONV_H0_C, DECONV_H0_AB));
        if let Some(resize) = t(RESIZE_CONV) {
            let slowest = report
                .rows
                .iter()
                .filter(|r| (r.width, r.height) == size && r.network != RESIZE_CONV)
                .all(|r| r.median_seconds < resize);
            push(format!("{RESIZE_CONV} slowest"), Some(slowest));
        }
    }
    out
}

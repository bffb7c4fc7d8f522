//! The three-layer super-resolution network: two "same" convolutions with
//! ReLU on the low-resolution grid followed by one upsampling layer that
//! produces the luminance output.

mod checkpoint;
mod data;
mod train;

pub use checkpoint::{load_checkpoint, read_sidecar, save_checkpoint, sidecar_path, CheckpointRecord, Sidecar};
pub use data::{
    bicubic_downscale, bicubic_resize, crop_to_multiple, extract_patches, subsample_patches, synthetic_image,
    synthetic_images, PatchPair,
};
pub use train::{
    adam_step, loss_decreased, mse_loss, psnr, train, train_with, AdamState, TrainConfig, TrainOutcome,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::StepResponse;
use crate::error::{Error, Result};
use crate::tensor::{conv_backward, conv_backward_params, conv_forward, relu, relu_backward, ConvParams, Tensor};
use crate::upsample::{h0_postfilter_scaled, he_normal, Correction, Upsampler, UpsamplerKind, UpsamplerSpec, Upscale};

pub const CONFIG_VERSION: u32 = 1;

fn default_version() -> u32 {
    CONFIG_VERSION
}
fn default_k1() -> usize {
    5
}
fn default_n1() -> usize {
    64
}
fn default_k2() -> usize {
    3
}
fn default_n2() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default = "default_k1")]
    pub k1: usize,
    #[serde(default = "default_n1")]
    pub n1: usize,
    #[serde(default = "default_k2")]
    pub k2: usize,
    #[serde(default = "default_n2")]
    pub n2: usize,
    pub upsampler: UpsamplerSpec,
    /// Train without correction, then append a gain-compensated `H0`.
    #[serde(default)]
    pub approach_a: bool,
    #[serde(default)]
    pub seed: u64,
}

/// The network rows used throughout the experiments, by short name.
pub const PRESETS: [(&str, &str); 8] = [
    ("deconv", "Deconv"),
    ("subpixel", "Sub-pixel"),
    ("resize_conv", "ResizeConv"),
    ("deconv_h0_a", "Deconv+H0 (A)"),
    ("deconv_h0_b", "Deconv+H0 (B)"),
    ("deconv_h0_c", "Deconv+H0 (C)"),
    ("subpixel_h0_a", "Sub-pixel+H0 (A)"),
    ("subpixel_h0_b", "Sub-pixel+H0 (B)"),
];

impl NetworkConfig {
    pub fn new(upsampler: UpsamplerSpec) -> Self {
        NetworkConfig {
            version: CONFIG_VERSION,
            k1: 5,
            n1: 64,
            k2: 3,
            n2: 32,
            upsampler,
            approach_a: false,
            seed: 0,
        }
    }

    pub fn preset(name: &str, factor: usize) -> Result<Self> {
        use Correction::*;
        use UpsamplerKind::*;
        let (kind, correction, k, a) = match name {
            "deconv" => (Deconv, None, 9, false),
            "subpixel" => (Subpixel, None, 3, false),
            "resize_conv" => (ResizeConv, None, 9, false),
            "deconv_h0_a" => (Deconv, None, 9, true),
            "deconv_h0_b" => (Deconv, PostH0, 9, false),
            "deconv_h0_c" => (Deconv, InsideH0, 9, false),
            "subpixel_h0_a" => (Subpixel, None, 3, true),
            "subpixel_h0_b" => (Subpixel, PostH0, 3, false),
            _ => {
                let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
                return Err(Error::Config(format!("unknown preset {name:?}; expected one of {names:?}")));
            }
        };
        let mut cfg = NetworkConfig::new(UpsamplerSpec {
            kind,
            correction,
            factor,
            kernel_size: k,
        });
        cfg.approach_a = a;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn display_name(&self) -> String {
        let base = match self.upsampler.kind {
            UpsamplerKind::Deconv => "Deconv",
            UpsamplerKind::Subpixel => "Sub-pixel",
            UpsamplerKind::ResizeConv => "ResizeConv",
        };
        match (self.approach_a, self.upsampler.correction) {
            (true, _) => format!("{base}+H0 (A)"),
            (_, Correction::PostH0) => format!("{base}+H0 (B)"),
            (_, Correction::InsideH0) => format!("{base}+H0 (C)"),
            _ => base.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported network config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        for (name, v) in [("k1", self.k1), ("n1", self.n1), ("k2", self.k2), ("n2", self.n2)] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        self.upsampler.validate()?;
        if self.approach_a {
            if self.upsampler.kind == UpsamplerKind::ResizeConv {
                return Err(Error::Config(
                    "approach_a has nothing to correct on resize_conv".into(),
                ));
            }
            if self.upsampler.correction != Correction::None {
                return Err(Error::Config(
                    "approach_a applies to networks trained without correction".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn factor(&self) -> usize {
        self.upsampler.factor
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    x: Tensor,
    z1: Tensor,
    a1: Tensor,
    z2: Tensor,
    a2: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SrNet {
    config: NetworkConfig,
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
    pub upsampler: Upsampler,
    /// Gains of the `H0` stages appended after training.
    approach_a: Vec<f64>,
}

impl SrNet {
    /// He-initialised network (zero biases), seeded from `config.seed`.
    pub fn init(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let conv1_w = he_normal(&[config.n1, 1, config.k1, config.k1], &mut rng);
        let conv2_w = he_normal(&[config.n2, config.n1, config.k2, config.k2], &mut rng);
        let upsampler = Upsampler::he_init(&config.upsampler, config.n2, &mut rng)?;
        let mut net = SrNet {
            config: config.clone(),
            conv1_w,
            conv1_b: Tensor::zeros(&[config.n1]),
            conv2_w,
            conv2_b: Tensor::zeros(&[config.n2]),
            upsampler,
            approach_a: Vec::new(),
        };
        if config.approach_a {
            net.push_approach_a();
        }
        Ok(net)
    }

    /// Assembles a network from stored parameters, checking every shape.
    pub fn from_parts(config: &NetworkConfig, params: Vec<Tensor>, approach_a: Vec<f64>) -> Result<Self> {
        let mut net = SrNet::init_shapes_only(config)?;
        if params.len() != 6 {
            return Err(Error::Format(format!("expected 6 parameter tensors, got {}", params.len())));
        }
        for (slot, t) in net.params_mut().into_iter().zip(params) {
            if slot.shape() != t.shape() {
                return Err(Error::Shape {
                    shape: t.shape().to_vec(),
                    reason: format!("expected {:?}", slot.shape()),
                });
            }
            *slot = t;
        }
        net.approach_a = approach_a;
        Ok(net)
    }

    fn init_shapes_only(config: &NetworkConfig) -> Result<Self> {
        let mut cfg = config.clone();
        cfg.approach_a = false;
        SrNet::init(&cfg).map(|mut n| {
            n.config.approach_a = config.approach_a;
            n
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn factor(&self) -> usize {
        self.config.factor()
    }

    pub fn approach_a_gains(&self) -> &[f64] {
        &self.approach_a
    }

    fn push_approach_a(&mut self) {
        let u = self.upsampler.upscale();
        self.approach_a.push(1.0 / (u.rows * u.cols) as f64);
    }

    /// Learnable parameters in a fixed order: conv1 weight/bias, conv2
    /// weight/bias, upsampler weight/bias.
    pub fn params(&self) -> [&Tensor; 6] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.upsampler.weight,
            &self.upsampler.bias,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.upsampler.weight,
            &mut self.upsampler.bias,
        ]
    }

    pub fn param_names() -> [(&'static str, &'static str); 6] {
        [
            ("conv1", "weight"),
            ("conv1", "bias"),
            ("conv2", "weight"),
            ("conv2", "bias"),
            ("upsampler", "weight"),
            ("upsampler", "bias"),
        ]
    }

    /// Post-ReLU output of the second convolution (`n2` low-resolution maps).
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.1.a2)
    }

    fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let c = &self.config;
        let z1 = conv_forward(x, &self.conv1_w, self.conv1_b.data(), &ConvParams::same(c.k1, c.k1))?;
        let a1 = relu(&z1);
        let z2 = conv_forward(&a1, &self.conv2_w, self.conv2_b.data(), &ConvParams::same(c.k2, c.k2))?;
        let a2 = relu(&z2);
        let y = self.upsampler.forward(&a2)?;
        Ok((
            y,
            ForwardCache {
                x: x.clone(),
                z1,
                a1,
                z2,
                a2,
            },
        ))
    }

    /// Output of the trainable graph (without approach-A stages) plus the
    /// activations needed by [`SrNet::backward`].
    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.forward_cached(x)
    }

    /// Full inference: `(n, 1, h, w)` luminance in, `(n, 1, h*U, w*U)` out.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (mut y, _) = self.forward_cached(x)?;
        for &gain in &self.approach_a {
            y = h0_postfilter_scaled(&y, self.upsampler.upscale(), gain)?;
        }
        Ok(y)
    }

    /// Gradients of the trainable graph, aligned with [`SrNet::params`].
    pub fn backward(&self, cache: &ForwardCache, grad_y: &Tensor) -> Result<[Tensor; 6]> {
        let c = &self.config;
        let gu = self.upsampler.backward(&cache.a2, grad_y)?;
        let gz2 = relu_backward(&cache.z2, &gu.x)?;
        let g2 = conv_backward(&cache.a1, &self.conv2_w, &ConvParams::same(c.k2, c.k2), &gz2)?;
        let gz1 = relu_backward(&cache.z1, &g2.x)?;
        let (g1w, g1b) = conv_backward_params(&cache.x, &self.conv1_w, &ConvParams::same(c.k1, c.k1), &gz1)?;
        let vec1 = |v: Vec<f64>| Tensor::new(vec![v.len()], v);
        Ok([g1w, vec1(g1b)?, g2.w, vec1(g2.b)?, gu.weight, gu.bias])
    }

    /// Extent of the whole network's impulse response in output samples.
    pub fn receptive_field(&self) -> usize {
        let u = self.factor();
        (self.config.k1 - 1 + self.config.k2 - 1) * u
            + self.upsampler.receptive_field()
            + self.approach_a.len() * (u - 1)
            + 1
    }
}

/// Appends a gain-compensated `H0` stage (gain `1/U^2`) to a trained
/// network. Weights are left untouched.
pub fn apply_approach_a(net: &SrNet) -> Result<SrNet> {
    if net.upsampler.kind() == UpsamplerKind::ResizeConv {
        return Err(Error::Config(
            "approach A is not applicable to resize_conv (nothing to correct)".into(),
        ));
    }
    if net.upsampler.is_corrected() || !net.approach_a.is_empty() {
        log::warn!("network already contains H0; applying approach A again smooths the output twice");
    }
    let mut out = net.clone();
    out.push_approach_a();
    Ok(out)
}

impl StepResponse for SrNet {
    fn upscale(&self) -> Upscale {
        self.upsampler.upscale()
    }

    fn input_channels(&self) -> usize {
        1
    }

    fn receptive_field(&self) -> usize {
        SrNet::receptive_field(self)
    }

    fn respond(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }

    /// Measures each `A_c` on the interior of the second layer's output and
    /// evaluates the upsampler's closed form.
    fn predict(&self, x: &Tensor) -> Result<Option<Vec<f64>>> {
        let a2 = self.features(x)?;
        let (_, c, h, w) = a2.dims4()?;
        let m = self.config.k1 / 2 + self.config.k2 / 2;
        let u = self.upscale();
        let (y0, y1) = if u.rows > 1 { (m, h.saturating_sub(m)) } else { (0, h) };
        let (x0, x1) = (m, w.saturating_sub(m));
        if y0 >= y1 || x0 >= x1 {
            return Ok(None);
        }
        let mut a = Vec::with_capacity(c);
        for ci in 0..c {
            let plane = &a2.data()[ci * h * w..(ci + 1) * h * w];
            let mut sum = 0.0;
            for yy in y0..y1 {
                sum += plane[yy * w + x0..yy * w + x1].iter().sum::<f64>();
            }
            a.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
        }
        let mut phases = self.upsampler.predict_phases(&a)?;
        for &gain in &self.approach_a {
            let total: f64 = phases.iter().sum();
            phases = vec![gain * total; phases.len()];
        }
        Ok(Some(phases))
    }
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NetworkConfig, PatchPair, SrNet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn default_lr() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_batch() -> usize {
    4
}
fn default_iterations() -> usize {
    2000
}
fn default_hr_patch() -> usize {
    72
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// HR patch side; the LR side is `hr_patch / U`.
    #[serde(default = "default_hr_patch")]
    pub hr_patch: usize,
    /// Seed of the batch shuffling.
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
            batch_size: default_batch(),
            iterations: default_iterations(),
            hr_patch: default_hr_patch(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("learning_rate must be positive and betas in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.hr_patch == 0 {
            return Err(Error::Config("batch_size and hr_patch must be positive".into()));
        }
        Ok(())
    }
}

/// `½·mean((pred - target)²)` and its gradient `(pred - target) / count`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let diff = pred.sub(target)?;
    let n = diff.len() as f64;
    let loss = 0.5 * diff.data().iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff.scale(1.0 / n)))
}

/// Adam moments for a list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Number of completed steps.
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension {
            axis: "parameters",
            expected: state.m.len(),
            got: grads.len(),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        p.check_same_shape(g)?;
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            *pv -= cfg.learning_rate * (*mv / c1) / ((*vv / c2).sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: SrNet,
    /// Mini-batch loss before each update.
    pub losses: Vec<f64>,
}

fn stack(items: &[&Tensor]) -> Result<Tensor> {
    let shape = items[0].shape();
    let mut data = Vec::with_capacity(items.len() * items[0].len());
    for t in items {
        if t.shape() != shape {
            return Err(Error::Shape {
                shape: t.shape().to_vec(),
                reason: format!("batch items must share shape {shape:?}"),
            });
        }
        data.extend_from_slice(t.data());
    }
    let mut s = vec![items.len()];
    s.extend_from_slice(&shape[1..]);
    Tensor::new(s, data)
}

/// Trains a freshly initialised network.
pub fn train(net_cfg: &NetworkConfig, cfg: &TrainConfig, dataset: &[PatchPair]) -> Result<TrainOutcome> {
    train_with(SrNet::init(net_cfg)?, cfg, dataset, |_, _, _| Ok(()))
}

/// Trains `net` on the MSE objective. Approach-A stages are not
/// part of the trained graph; they stay attached and apply at inference.
/// `on_step(iteration, loss, net)` runs after every update.
pub fn train_with<F>(mut net: SrNet, cfg: &TrainConfig, dataset: &[PatchPair], mut on_step: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, f64, &SrNet) -> Result<()>,
{
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let u = net.factor();
    for p in dataset {
        let (lh, lw) = p.lr.plane_dims()?;
        if p.hr.plane_dims()? != (lh * u, lw * u) {
            return Err(Error::Shape {
                shape: p.hr.shape().to_vec(),
                reason: format!("HR patch must be {u}x the LR patch"),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut adam = AdamState::new(&net.params());
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let lr = stack(&idx.iter().map(|&i| &dataset[i].lr).collect::<Vec<_>>())?;
        let hr = stack(&idx.iter().map(|&i| &dataset[i].hr).collect::<Vec<_>>())?;
        let (pred, cache) = net.forward_train(&lr)?;
        let (loss, grad) = mse_loss(&pred, &hr)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: it, loss });
        }
        let grads = net.backward(&cache, &grad)?;
        adam_step(&mut net.params_mut(), &grads, &mut adam, cfg)?;
        losses.push(loss);
        if it % 200 == 0 {
            log::debug!("iteration {it}: loss {loss:.6e}");
        }
        on_step(it + 1, loss, &net)?;
    }
    Ok(TrainOutcome { net, losses })
}

/// True when the mean loss over the last tenth of the curve is strictly
/// below the mean over the first tenth.
pub fn loss_decreased(losses: &[f64]) -> bool {
    if losses.len() < 2 {
        return false;
    }
    let k = (losses.len() / 10).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    mean(&losses[losses.len() - k..]) < mean(&losses[..k])
}

/// `10·log10(peak² / MSE)`; identical inputs give `+∞`.
pub fn psnr(pred: &Tensor, target: &Tensor, peak: f64) -> Result<f64> {
    let diff = pred.sub(target)?;
    let mse = diff.data().iter().map(|d| d * d).sum::<f64>() / diff.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::srnet::{extract_patches, synthetic_image};
    use crate::tensor::grad_check;

    #[test]
    fn mse_examples() {
        let t = Tensor::signal(&[0.1, 0.5, -0.3]);
        assert_eq!(mse_loss(&t, &t).unwrap().0, 0.0);
        let p = t.map(|v| v + 2.0);
        assert!((mse_loss(&p, &t).unwrap().0 - 2.0).abs() < 1e-15);
        assert!(mse_loss(&t, &Tensor::signal(&[1.0])).is_err());
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let target = Tensor::signal(&[0.3, -1.0, 2.0, 0.0]);
        let x = Tensor::signal(&[1.0, 0.5, -0.2, 0.7]);
        let r = grad_check(|p: &Tensor| mse_loss(p, &target).unwrap(), &x, 1e-6, 1e-8);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let cfg = TrainConfig::default();
        let mut p = Tensor::signal(&[1.0, -2.0]);
        let mut st = AdamState::new(&[&p]);
        st.m[0] = Tensor::signal(&[0.5, 0.5]);
        adam_step(&mut [&mut p], &[Tensor::zeros(&[1, 1, 1, 2])], &mut st, &cfg).unwrap();
        // the update is driven by the decayed first moment only
        assert_eq!(st.m[0].data(), &[0.45, 0.45]);
        let mut q = Tensor::signal(&[1.0, -2.0]);
        let mut fresh = AdamState::new(&[&q]);
        adam_step(&mut [&mut q], &[Tensor::zeros(&[1, 1, 1, 2])], &mut fresh, &cfg).unwrap();
        assert_eq!(q.data(), &[1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = TrainConfig::default();
        let mut p = Tensor::signal(&[0.0, 0.0]);
        let mut st = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[Tensor::signal(&[3.0, -0.01])], &mut st, &cfg).unwrap();
        assert!((p.data()[0] + 1e-4).abs() < 1e-10);
        assert!((p.data()[1] - 1e-4).abs() < 1e-9);
    }

    #[test]
    fn adam_two_steps_match_scalar_reference() {
        let cfg = TrainConfig {
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let (g1, g2) = (0.5f64, -0.25f64);
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 1.0f64);
        for (t, g) in [(1, g1), (2, g2)] {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }
        let mut p = Tensor::signal(&[1.0]);
        let mut st = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[Tensor::signal(&[g1])], &mut st, &cfg).unwrap();
        adam_step(&mut [&mut p], &[Tensor::signal(&[g2])], &mut st, &cfg).unwrap();
        assert!((p.data()[0] - x).abs() < 1e-12);
    }

    #[test]
    fn psnr_examples() {
        let t = Tensor::full(&[1, 1, 4, 4], 100.0);
        assert_eq!(psnr(&t, &t, 255.0).unwrap(), f64::INFINITY);
        let one = t.map(|v| v + 1.0);
        assert!((psnr(&one, &t, 255.0).unwrap() - 48.130803608679105).abs() < 1e-9);
        let two = t.map(|v| v + 2.0);
        let drop = psnr(&one, &t, 255.0).unwrap() - psnr(&two, &t, 255.0).unwrap();
        assert!((drop - 6.020599913279624).abs() < 1e-9);
    }

    fn tiny(name: &str) -> NetworkConfig {
        let mut c = NetworkConfig::preset(name, 2).unwrap();
        c.n1 = 8;
        c.n2 = 4;
        c.k1 = 3;
        if c.upsampler.kernel_size > 3 {
            c.upsampler.kernel_size = 4;
        }
        c
    }

    #[test]
    fn overfits_single_sample() {
        let img = synthetic_image(21, 16, 16);
        let data = extract_patches(&img, 2, 16, 16).unwrap();
        assert_eq!(data.len(), 1);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            iterations: 500,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let out = train(&tiny("deconv"), &cfg, &data).unwrap();
        let (first, last) = (out.losses[0], *out.losses.last().unwrap());
        assert!(last < 0.1 * first, "{first} -> {last}");
    }

    #[test]
    fn same_seed_same_weights() {
        let data = extract_patches(&synthetic_image(5, 24, 24), 2, 8, 8).unwrap();
        let cfg = TrainConfig {
            iterations: 30,
            ..TrainConfig::default()
        };
        let a = train(&tiny("subpixel_h0_b"), &cfg, &data).unwrap();
        let b = train(&tiny("subpixel_h0_b"), &cfg, &data).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            train(&tiny("deconv"), &TrainConfig::default(), &[]),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let data = extract_patches(&synthetic_image(5, 16, 16), 2, 8, 8).unwrap();
        let mut net = SrNet::init(&tiny("deconv")).unwrap();
        net.upsampler.bias.data_mut()[0] = f64::NAN;
        let r = train_with(net, &TrainConfig::default(), &data, |_, _, _| Ok(()));
        assert!(matches!(r, Err(Error::Diverged { iteration: 0, .. })));
    }
}

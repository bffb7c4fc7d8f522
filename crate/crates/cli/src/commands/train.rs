use std::path::{Path, PathBuf};

use checkerfree::image_io::read_image;
use checkerfree::srnet::{
    crop_to_multiple, extract_patches, loss_decreased, save_checkpoint, subsample_patches, synthetic_images,
    train_with, NetworkConfig, PatchPair, SrNet, TrainConfig,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::DEFAULT_FACTOR;
use crate::args::{Cli, TrainArgs};
use crate::error::{CliError, Result};
use crate::manifest::read_json;
use crate::{require, Outcome};

pub const RUN_CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Full network description; alternatively give `preset` (+ `factor`).
    #[serde(default)]
    pub network: Option<NetworkConfig>,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub factor: Option<usize>,
    #[serde(default)]
    pub training: TrainConfig,
    pub dataset: DatasetConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Directory holding `hr/*.png|pgm|ppm` (or the images directly);
    /// relative paths are resolved against the config file.
    #[serde(default)]
    pub root: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSet>,
    /// Patch stride in HR pixels; defaults to half the patch.
    #[serde(default)]
    pub stride: Option<usize>,
    /// Keep a seeded random subset of this many patches.
    #[serde(default)]
    pub max_patches: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSet {
    #[serde(default = "three")]
    pub count: usize,
    #[serde(default = "side")]
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn three() -> usize {
    3
}

fn side() -> usize {
    144
}

impl RunConfig {
    /// Parses and checks everything that can be checked without data.
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = read_json(path)?;
        if cfg.version != RUN_CONFIG_VERSION {
            return Err(CliError::usage(format!(
                "unsupported run config version {} (expected {RUN_CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.network_config()?;
        cfg.training.validate()?;
        match (&cfg.dataset.root, &cfg.dataset.synthetic) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(CliError::usage("dataset needs exactly one of `root` or `synthetic`")),
        }
        Ok(cfg)
    }

    pub fn network_config(&self) -> Result<NetworkConfig> {
        let cfg = match (&self.network, &self.preset) {
            (Some(n), None) => {
                if self.factor.is_some() {
                    return Err(CliError::usage("`factor` goes inside `network.upsampler` when `network` is given"));
                }
                n.clone()
            }
            (None, Some(p)) => NetworkConfig::preset(p, self.factor.unwrap_or(DEFAULT_FACTOR))?,
            _ => return Err(CliError::usage("give exactly one of `network` or `preset`")),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn image_files(root: &Path) -> Result<Vec<PathBuf>> {
    let dir = if root.join("hr").is_dir() { root.join("hr") } else { root.to_path_buf() };
    let entries = std::fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm" | "ppm" | "pnm"))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn build_dataset(cfg: &RunConfig, base: &Path, u: usize) -> Result<(Vec<PatchPair>, usize)> {
    let hr_patch = cfg.training.hr_patch;
    let stride = cfg.dataset.stride.unwrap_or((hr_patch / 2 / u * u).max(u));
    let images = match (&cfg.dataset.root, &cfg.dataset.synthetic) {
        (Some(root), _) => {
            let root = if root.is_absolute() { root.clone() } else { base.join(root) };
            image_files(&root)?
                .iter()
                .map(|p| Ok(read_image(p)?.luminance()))
                .collect::<Result<Vec<_>>>()?
        }
        (_, Some(s)) => synthetic_images(s.count, s.size, s.seed),
        _ => Vec::new(),
    };
    let mut pairs = Vec::new();
    for img in &images {
        pairs.extend(extract_patches(&crop_to_multiple(img, u)?, u, hr_patch, stride)?);
    }
    if let Some(n) = cfg.dataset.max_patches {
        pairs = subsample_patches(pairs, n, cfg.training.seed);
    }
    Ok((pairs, images.len()))
}

fn loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("iteration,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s += &format!("{},{l:.9e}\n", i + 1);
    }
    s
}

pub fn run(cli: &Cli, args: &TrainArgs) -> Result<Outcome> {
    let path = require(&cli.config, "config")?;
    let mut cfg = RunConfig::load(path)?;
    let mut net_cfg = cfg.network_config()?;
    if cli.factor.is_some_and(|u| u != net_cfg.factor()) {
        return Err(CliError::usage("--factor disagrees with the run config"));
    }
    if let Some(s) = cli.seed {
        net_cfg.seed = s;
        cfg.training.seed = s;
    }
    if args.checkpoint_every == Some(0) {
        return Err(CliError::usage("--checkpoint-every must be positive"));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let (data, n_images) = build_dataset(&cfg, base, net_cfg.factor())?;
    log::info!("{} patches from {n_images} images", data.len());

    let mut outputs = Vec::new();
    let out = cli.out.clone();
    let every = args.checkpoint_every;
    let mut saved: Vec<PathBuf> = Vec::new();
    let result = train_with(SrNet::init(&net_cfg)?, &cfg.training, &data, |it, _, net| {
        if every.is_some_and(|k| it % k == 0 && it < cfg.training.iterations) {
            let p = out.join(format!("checkpoint_{it:06}.ckf"));
            save_checkpoint(net, &p)?;
            saved.push(p);
        }
        Ok(())
    })?;
    outputs.extend(saved);

    let ckpt = cli.out.join("checkpoint.ckf");
    save_checkpoint(&result.net, &ckpt)?;
    let csv = cli.out.join("loss.csv");
    std::fs::write(&csv, loss_csv(&result.losses)).map_err(|e| CliError::io(&csv, e))?;
    outputs.push(ckpt.clone());
    outputs.push(csv.clone());

    let k = (result.losses.len() / 10).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let first = mean(&result.losses[..k]);
    let last = mean(&result.losses[result.losses.len() - k..]);
    let decreased = loss_decreased(&result.losses);
    let summary = format!(
        "{} trained for {} iterations on {} patches: loss {first:.4e} -> {last:.4e} ({})\ncheckpoint {}",
        net_cfg.display_name(),
        result.losses.len(),
        data.len(),
        if decreased { "decreased" } else { "did not decrease" },
        ckpt.display()
    );
    let mut o = Outcome::new(
        true,
        json!({
            "network": net_cfg.display_name(),
            "iterations": result.losses.len(),
            "patches": data.len(),
            "images": n_images,
            "first_decile_mean_loss": first,
            "last_decile_mean_loss": last,
            "final_loss": result.losses.last(),
            "loss_decreased": decreased,
            "checkpoint": ckpt,
            "loss_csv": csv,
        }),
        summary,
    )?;
    o.config = json!({
        "run_config": path,
        "network": net_cfg,
        "training": cfg.training,
        "dataset": cfg.dataset,
    });
    o.outputs = outputs;
    Ok(o)
}

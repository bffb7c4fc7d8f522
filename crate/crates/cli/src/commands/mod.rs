pub mod analyze;
pub mod bench;
pub mod lint;
pub mod sr;
pub mod train;

use std::path::Path;

use checkerfree::image_io::read_image;
use checkerfree::srnet::{load_checkpoint, NetworkConfig, SrNet};
use checkerfree::tensor::Tensor;
use serde_json::{json, Value};

use crate::args::Cli;
use crate::error::{CliError, Result};
use crate::manifest::read_json;

pub const DEFAULT_FACTOR: usize = 4;

/// Network from `--weights`, else `--config`, else a preset; the second
/// value is a JSON snapshot of where it came from.
pub fn load_network(cli: &Cli, preset: Option<&str>) -> Result<(SrNet, Value)> {
    if let Some(w) = &cli.weights {
        let net = load_checkpoint(w)?;
        if let Some(u) = cli.factor {
            if u != net.factor() {
                return Err(CliError::usage(format!(
                    "--factor {u} does not match the checkpoint (U = {})",
                    net.factor()
                )));
            }
        }
        let snap = json!({ "weights": w, "network": net.config(), "approach_a_gains": net.approach_a_gains() });
        return Ok((net, snap));
    }
    let mut cfg = if let Some(path) = &cli.config {
        let cfg: NetworkConfig = read_json(path)?;
        cfg
    } else if let Some(name) = preset {
        NetworkConfig::preset(name, cli.factor.unwrap_or(DEFAULT_FACTOR))?
    } else {
        return Err(CliError::usage("give --weights, --config or --preset"));
    };
    if let Some(u) = cli.factor {
        cfg.upsampler.factor = u;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let net = SrNet::init(&cfg)?;
    Ok((net, json!({ "network": cfg })))
}

/// Luminance plane of an image file plus whether it was RGB.
pub fn read_luma(path: &Path) -> Result<Tensor> {
    Ok(read_image(path)?.luminance())
}

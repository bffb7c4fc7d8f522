//! Checkpoints: all parameters as consecutive `CKF1` records in one file,
//! plus `<file>.json` naming each record and holding the network config.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{NetworkConfig, SrNet};
use crate::error::{Error, Result};
use crate::tensor::{read_tensors, write_tensors};

pub const SIDECAR_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointRecord {
    pub layer: String,
    pub role: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub version: u32,
    pub network: NetworkConfig,
    /// Gains of approach-A stages applied after the upsampler.
    #[serde(default)]
    pub approach_a_gains: Vec<f64>,
    pub records: Vec<CheckpointRecord>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_checkpoint(net: &SrNet, path: &Path) -> Result<()> {
    let params = net.params();
    let records = SrNet::param_names()
        .iter()
        .zip(params.iter())
        .map(|(&(layer, role), t)| CheckpointRecord {
            layer: layer.into(),
            role: role.into(),
            shape: t.shape().to_vec(),
        })
        .collect();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_tensors(BufWriter::new(file), &params).map_err(|e| Error::io(path, e))?;
    let sidecar = Sidecar {
        version: SIDECAR_VERSION,
        network: net.config().clone(),
        approach_a_gains: net.approach_a_gains().to_vec(),
        records,
    };
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    if sidecar.version != SIDECAR_VERSION {
        return Err(Error::Format(format!("unsupported sidecar version {}", sidecar.version)));
    }
    Ok(sidecar)
}

pub fn load_checkpoint(path: &Path) -> Result<SrNet> {
    let sidecar = read_sidecar(path)?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let tensors = read_tensors(BufReader::new(file))?;
    if tensors.len() != sidecar.records.len() {
        return Err(Error::Format(format!(
            "{} records in file but {} named in the sidecar",
            tensors.len(),
            sidecar.records.len()
        )));
    }
    for (t, r) in tensors.iter().zip(&sidecar.records) {
        if t.shape() != r.shape.as_slice() {
            return Err(Error::Format(format!(
                "{}.{} has shape {:?}, sidecar says {:?}",
                r.layer,
                r.role,
                t.shape(),
                r.shape
            )));
        }
    }
    sidecar.network.validate()?;
    SrNet::from_parts(&sidecar.network, tensors, sidecar.approach_a_gains)
}

//! Checkpoints: `<stem>.bin` holds the parameters as little-endian f64, `<stem>.json`
//! describes the model and where each tensor lives in the flat file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelSpec, Network};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in f64 elements from the start of the binary file.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub spec: ModelSpec,
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub sections: serde_json::Map<String, serde_json::Value>,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

pub fn tensor_entries(net: &Network) -> Vec<TensorEntry> {
    let shapes = net.tensor_shapes();
    let mut out = Vec::new();
    let mut k = 0;
    for (layer, slot) in net.slots().iter().enumerate() {
        if let Some(slot) = slot {
            for (suffix, range) in [("weight", &slot.weight), ("bias", &slot.bias)] {
                out.push(TensorEntry {
                    name: format!("layer{layer}.{suffix}"),
                    shape: shapes[k].clone(),
                    offset: range.start,
                    len: range.len(),
                });
                k += 1;
            }
        }
    }
    out
}

pub fn save_checkpoint(
    net: &Network,
    stem: &Path,
    sections: serde_json::Map<String, serde_json::Value>,
) -> Result<()> {
    let (bin, json) = paths(stem);
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bytes: Vec<u8> = net.params().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let meta = CheckpointMeta {
        spec: net.spec().clone(),
        tensors: tensor_entries(net),
        sections,
    };
    fs::write(&json, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

pub fn load_checkpoint(stem: &Path) -> Result<(Network, CheckpointMeta)> {
    let (bin, json) = paths(stem);
    let meta: CheckpointMeta =
        serde_json::from_slice(&fs::read(&json).map_err(|e| Error::io(&json, e))?)?;
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Malformed(format!(
            "{} is not a whole number of f64",
            bin.display()
        )));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut net = Network::zeros(meta.spec.clone())?;
    if tensor_entries(&net) != meta.tensors {
        return Err(Error::Malformed(
            "tensor table does not match model spec".into(),
        ));
    }
    net.set_params(params)?;
    Ok((net, meta))
}

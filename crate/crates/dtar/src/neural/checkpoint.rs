//! Versioned JSON checkpoints: parameter tensors plus optimizer state.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::nn::{AdamState, ParamSet};
use crate::error::{Error, Result};

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AdamEntry {
    step: u64,
    m: Vec<TensorEntry>,
    v: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    kind: String,
    trained_steps: u64,
    params: Vec<TensorEntry>,
    adam: Option<AdamEntry>,
}

fn to_entry(name: &str, a: &Array2<f64>) -> TensorEntry {
    TensorEntry {
        name: name.to_string(),
        rows: a.nrows(),
        cols: a.ncols(),
        data: a.iter().copied().collect(),
    }
}

fn from_entry(e: &TensorEntry) -> Result<Array2<f64>> {
    Array2::from_shape_vec((e.rows, e.cols), e.data.clone())
        .map_err(|err| Error::BadCheckpoint(format!("tensor {}: {}", e.name, err)))
}

/// Serialize parameters (and optionally optimizer state) to a JSON file.
pub fn save_checkpoint(
    path: &std::path::Path,
    kind: &str,
    trained_steps: u64,
    params: &ParamSet,
    adam: Option<&AdamState>,
) -> Result<()> {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        kind: kind.to_string(),
        trained_steps,
        params: params
            .entries()
            .iter()
            .map(|p| to_entry(&p.name, &p.value))
            .collect(),
        adam: adam.map(|s| AdamEntry {
            step: s.step,
            m: s.m.iter().enumerate().map(|(i, a)| to_entry(&params.entries()[i].name, a)).collect(),
            v: s.v.iter().enumerate().map(|(i, a)| to_entry(&params.entries()[i].name, a)).collect(),
        }),
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let json = serde_json::to_string(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Result of loading a checkpoint into an existing parameter set.
pub struct LoadedCheckpoint {
    pub kind: String,
    pub trained_steps: u64,
    pub adam: Option<AdamState>,
}

/// Load a checkpoint into `params`, matching tensors by name and shape.
pub fn load_checkpoint(path: &std::path::Path, params: &mut ParamSet) -> Result<LoadedCheckpoint> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::BadCheckpoint(format!(
            "unsupported version {}",
            file.version
        )));
    }
    if file.params.len() != params.len() {
        return Err(Error::BadCheckpoint(format!(
            "parameter count {} does not match model {}",
            file.params.len(),
            params.len()
        )));
    }
    for (entry, slot) in file.params.iter().zip(0..params.len()) {
        let current = &params.entries()[slot];
        if current.name != entry.name {
            return Err(Error::BadCheckpoint(format!(
                "parameter {} expected name {}, found {}",
                slot, current.name, entry.name
            )));
        }
        let value = from_entry(entry)?;
        if value.dim() != current.value.dim() {
            return Err(Error::BadCheckpoint(format!(
                "parameter {} shape mismatch",
                entry.name
            )));
        }
        *params.value_mut(super::nn::ParamId(slot)) = value;
    }
    let adam = match file.adam {
        Some(a) => {
            let m: Result<Vec<_>> = a.m.iter().map(from_entry).collect();
            let v: Result<Vec<_>> = a.v.iter().map(from_entry).collect();
            Some(AdamState {
                step: a.step,
                m: m?,
                v: v?,
            })
        }
        None => None,
    };
    Ok(LoadedCheckpoint {
        kind: file.kind,
        trained_steps: file.trained_steps,
        adam,
    })
}

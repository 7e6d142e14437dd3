//! Checkpoint directories: one NPY file per tensor plus a JSON sidecar.
//!
//! ```text
//! version            format version, a single integer
//! config.json        model and training config, counters, history
//! params_{i}.npy     model parameters
//! buffers_{i}.npy    batchnorm running statistics
//! adam_m_{i}.npy     Adam first moments
//! adam_v_{i}.npy     Adam second moments
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, Session, TrainConfig, TrainHistory};
use crate::dataset::{read_npy, write_npy, Dtype};
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Sidecar {
    model: ModelConfig,
    train: TrainConfig,
    adam_t: u64,
    epochs_completed: usize,
    params: usize,
    buffers: usize,
    history: TrainHistory,
}

fn write_all(dir: &Path, prefix: &str, tensors: &[Tensor]) -> Result<()> {
    for (i, t) in tensors.iter().enumerate() {
        write_npy(t, Dtype::F64, &dir.join(format!("{prefix}_{i}.npy")))?;
    }
    Ok(())
}

fn read_all(dir: &Path, prefix: &str, count: usize) -> Result<Vec<Tensor>> {
    (0..count)
        .map(|i| {
            let path = dir.join(format!("{prefix}_{i}.npy"));
            read_npy(&path)
                .map(|(t, _)| t)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
        })
        .collect()
}

pub fn save_checkpoint(session: &Session, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let model = &session.model;
    write_all(dir, "params", model.params())?;
    write_all(dir, "buffers", model.buffers())?;
    write_all(dir, "adam_m", &session.adam.m)?;
    write_all(dir, "adam_v", &session.adam.v)?;
    let sidecar = Sidecar {
        model: model.config().clone(),
        train: session.config.clone(),
        adam_t: session.adam.t,
        epochs_completed: session.epochs_completed,
        params: model.params().len(),
        buffers: model.buffers().len(),
        history: session.history.clone(),
    };
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&sidecar)?)?;
    fs::write(dir.join("version"), format!("{CHECKPOINT_VERSION}\n"))?;
    Ok(())
}

/// Restores a session; any missing, truncated or inconsistent file fails
/// the whole load.
pub fn load_checkpoint(dir: &Path) -> Result<Session> {
    let fail = |what: String| Error::Checkpoint(format!("{}: {what}", dir.display()));
    let version = fs::read_to_string(dir.join("version")).map_err(|e| fail(format!("cannot read version: {e}")))?;
    match version.trim().parse::<u32>() {
        Ok(CHECKPOINT_VERSION) => {}
        _ => {
            return Err(fail(format!(
                "format version `{}` is not supported (expected {CHECKPOINT_VERSION})",
                version.trim()
            )))
        }
    }
    let text = fs::read_to_string(dir.join("config.json")).map_err(|e| fail(format!("cannot read config.json: {e}")))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| fail(format!("config.json: {e}")))?;

    let mut model = Model::build(&sidecar.model)?;
    if sidecar.params != model.params().len() || sidecar.buffers != model.buffers().len() {
        return Err(fail(format!(
            "config.json lists {} parameters and {} buffers, the model has {} and {}",
            sidecar.params,
            sidecar.buffers,
            model.params().len(),
            model.buffers().len()
        )));
    }
    let params = read_all(dir, "params", sidecar.params)?;
    let buffers = read_all(dir, "buffers", sidecar.buffers)?;
    let m = read_all(dir, "adam_m", sidecar.params)?;
    let v = read_all(dir, "adam_v", sidecar.params)?;
    for (name, moments) in [("adam_m", &m), ("adam_v", &v)] {
        for (i, (a, p)) in moments.iter().zip(&params).enumerate() {
            if a.shape() != p.shape() {
                return Err(fail(format!("{name}_{i} has shape {:?}, parameter has {:?}", a.shape(), p.shape())));
            }
        }
    }
    model.load_state(params, buffers).map_err(|e| fail(e.to_string()))?;
    sidecar.train.validate()?;
    Ok(Session {
        model,
        adam: AdamState { m, v, t: sidecar.adam_t },
        config: sidecar.train,
        epochs_completed: sidecar.epochs_completed,
        history: sidecar.history,
    })
}

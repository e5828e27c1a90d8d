//! Versioned JSON checkpoints.
//!
//! The container is `{"format": "adaptdhm-checkpoint", "version": 1, "model": {...}}`
//! where `model` holds the config, schema, embedding tables, shared and branch
//! MLPs, cluster centers, Adam states and step count. Floats are written with
//! shortest round-trip formatting and parsed exactly, so save then load gives
//! a bit-identical model.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::MultiBranchModel;

pub const CHECKPOINT_FORMAT: &str = "adaptdhm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint: format is `{0}`")]
    Format(String),
    #[error("checkpoint version {found} is not supported (expected {supported})")]
    Version { found: u32, supported: u32 },
    #[error("model has non-finite parameters; refusing to save")]
    NonFinite,
}

#[derive(Serialize)]
struct ContainerRef<'a> {
    format: &'a str,
    version: u32,
    model: &'a MultiBranchModel,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Deserialize)]
struct Container {
    model: MultiBranchModel,
}

pub fn checkpoint_to_string(model: &MultiBranchModel) -> Result<String, CheckpointError> {
    if !model.all_finite() {
        return Err(CheckpointError::NonFinite);
    }
    Ok(serde_json::to_string(&ContainerRef {
        format: CHECKPOINT_FORMAT,
        version: CHECKPOINT_VERSION,
        model,
    })?)
}

pub fn checkpoint_from_str(text: &str) -> Result<MultiBranchModel, CheckpointError> {
    let header: Header = serde_json::from_str(text)?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(CheckpointError::Format(header.format));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: header.version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let container: Container = serde_json::from_str(text)?;
    Ok(container.model)
}

pub fn save_checkpoint(model: &MultiBranchModel, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    fs::write(path, checkpoint_to_string(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MultiBranchModel, CheckpointError> {
    checkpoint_from_str(&fs::read_to_string(path)?)
}

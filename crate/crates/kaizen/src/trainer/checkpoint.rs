//! Run checkpoints: JSON containers with all floating-point state stored as
//! f64, which serde_json round-trips exactly.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelDims;
use crate::numeric::{Layout, ParameterVector};
use crate::trainer::engine::KaizenSnapshot;
use crate::Scalar;

/// A parameter vector widened to f64 with its segment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamData {
    pub segments: Vec<(String, usize)>,
    pub values: Vec<f64>,
}

impl ParamData {
    pub fn from_vector<T: Scalar>(v: &ParameterVector<T>) -> Self {
        ParamData {
            segments: v
                .layout()
                .segments()
                .iter()
                .map(|s| (s.name.clone(), s.len))
                .collect(),
            values: v.to_f64_values(),
        }
    }

    pub fn to_vector<T: Scalar>(&self, layout: &Arc<Layout>) -> Result<ParameterVector<T>> {
        let expected: Vec<(String, usize)> = layout
            .segments()
            .iter()
            .map(|s| (s.name.clone(), s.len))
            .collect();
        if expected != self.segments {
            return Err(Error::Checkpoint(format!(
                "segment table mismatch: checkpoint {:?} vs model {:?}",
                self.segments, expected
            )));
        }
        ParameterVector::from_values(
            layout.clone(),
            self.values.iter().map(|&v| T::from_config(v)).collect(),
        )
    }

    /// Rebuilds both the layout and the vector (for standalone model files).
    pub fn to_owned_vector<T: Scalar>(&self) -> Result<ParameterVector<T>> {
        let layout = Layout::new(self.segments.iter().map(|(n, l)| (n.clone(), *l)));
        self.to_vector(&layout)
    }
}

/// A standalone evaluable model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub dims: ModelDims,
    pub params: ParamData,
    #[serde(default)]
    pub step: u64,
    #[serde(default)]
    pub config_hash: String,
}

impl ModelCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Pipeline phase recorded in a [`RunCheckpoint`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    SeedTrained,
    KaizenRunning,
    KaizenDone,
    Done,
}

/// Full pipeline checkpoint for `train --resume`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunCheckpoint {
    pub dims: ModelDims,
    pub config_hash: String,
    pub phase: Phase,
    pub seed_model: ParamData,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kaizen: Option<KaizenSnapshot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_student: Option<ParamData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_teacher: Option<ParamData>,
}

impl RunCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let json = serde_json::to_string(value)
        .map_err(|e| Error::Checkpoint(format!("serialize {}: {e}", path.display())))?;
    // Write-then-rename so an interrupted save never corrupts a checkpoint.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, json)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("parse {}: {e}", path.display())))
}

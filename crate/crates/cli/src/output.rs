//! JSON documents written by the commands. Each carries the run's `meta`
//! block; the shapes are pinned by the schemas under `schemas/`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use surfreg::eval::BenchmarkReport;
use surfreg::registration::RegistrationReport;
use surfreg::train::EpochLog;
use surfreg::{CorrespondenceSet, RigidTransform};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchFile {
    pub meta: serde_json::Value,
    pub n_source: usize,
    pub n_target: usize,
    /// `[source index, target index]` pairs surviving the visibility mask.
    pub matches: CorrespondenceSet,
    /// Dual-softmax confidence of each kept pair.
    pub confidence: Vec<f64>,
    /// Clamped visibility score of every source point.
    pub visibility: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformFile {
    pub meta: serde_json::Value,
    pub transform: RigidTransform,
    pub determinant: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationFile {
    pub meta: serde_json::Value,
    pub report: RegistrationReport,
    /// Present when the pair came from a sample directory with ground truth.
    pub registration_error_mm: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainFile {
    pub meta: serde_json::Value,
    pub n_train_samples: usize,
    pub n_parameters: usize,
    pub epochs: Vec<EpochLog>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub meta: serde_json::Value,
    pub split: String,
    pub samples: Vec<String>,
    pub report: BenchmarkReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunFile {
    pub meta: serde_json::Value,
    pub n_samples: usize,
    pub n_train: usize,
    pub n_test: usize,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::path(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::path(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::path(path, e))
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use surfreg::eval::BenchmarkConfig;
use surfreg::fpfh::FpfhConfig;
use surfreg::net::NetConfig;
use surfreg::synth::DatasetConfig;
use surfreg::train::TrainConfig;

use crate::error::CliError;

/// Contents of `--config`. Every section is optional; unknown keys are errors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub dataset: DatasetConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub fpfh: FpfhConfig,
    pub benchmark: BenchmarkConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config { path: path.to_path_buf(), message: e.to_string() })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config { path: path.to_path_buf(), message: e.to_string() })
    }
}

/// Resolved global options. Precedence is flag, then config file, then default.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub force: bool,
}

impl Context {
    pub fn resolve(file: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>, force: bool) -> Result<Self, CliError> {
        let mut config = match file {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        // an explicit seed (flag or file) drives every seeded stage
        let explicit = seed.or(config.seed);
        if let Some(s) = explicit {
            config.train.rng_seed = s;
            config.benchmark.ransac.rng_seed = s;
        }
        config.seed = explicit;
        Ok(Self { seed: explicit.unwrap_or(0), config, out, force })
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out.as_deref().ok_or_else(|| CliError::Usage("--out is required for this command".into()))
    }

    /// Creates the output directory and refuses to replace existing files
    /// unless `--force`.
    pub fn prepare_outputs(&self, names: &[&str]) -> Result<Vec<PathBuf>, CliError> {
        let dir = self.out_dir()?;
        std::fs::create_dir_all(dir).map_err(|e| CliError::path(dir, e))?;
        let paths: Vec<PathBuf> = names.iter().map(|n| dir.join(n)).collect();
        if !self.force {
            if let Some(p) = paths.iter().find(|p| p.exists()) {
                return Err(CliError::Exists { path: p.clone() });
            }
        }
        Ok(paths)
    }

    /// The `meta` block echoed into every JSON output.
    pub fn meta(&self, command: &str) -> serde_json::Value {
        serde_json::json!({
            "tool": "surfreg",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": self.seed,
            "config": self.config,
        })
    }
}

pub fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::path(path, "no such file"))
    }
}

pub fn require_dir(path: &Path) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::path(path, "no such directory"))
    }
}

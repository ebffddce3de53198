//! Run configuration: one JSON document with the keys `model`, `solver`,
//! `filter` and `experiment`. Unknown keys are rejected and every section is
//! validated on load.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::experiments::{FilterKind, MatrixBlock};
use crate::filter::FilterConfig;
use crate::model::ObservationSubset;
use crate::solver::SolverConfig;
use crate::synth::SamplingConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Number of plausible targets to generate.
    pub count: usize,
    /// Seed for noise streams and run selection.
    pub seed: u64,
    /// Noise levels written by `generate`.
    pub noise_levels: Vec<f64>,
    pub smoothing_window: usize,
    pub matrix: Vec<MatrixBlock>,
    pub filters: Vec<FilterKind>,
    /// Accuracy thresholds (percent) reported as heatmaps.
    pub thresholds: Vec<f64>,
    /// Noise level of the original-vs-modified comparison.
    pub compare_noise: f64,
    /// Number of subset-{1,4} runs re-simulated for the blind `p_sa` check.
    pub blind_runs: usize,
    pub blind_noise: f64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let full = ObservationSubset::full();
        let pair: ObservationSubset = "1,4".parse().expect("valid subset");
        Self {
            count: 50,
            seed: 20_251_017,
            noise_levels: vec![0.01, 0.05, 0.10],
            smoothing_window: 5,
            matrix: vec![
                MatrixBlock {
                    subsets: ObservationSubset::all_nonempty(),
                    noise_levels: vec![0.01],
                },
                MatrixBlock {
                    subsets: vec![full, pair],
                    noise_levels: vec![0.05, 0.10],
                },
            ],
            filters: vec![FilterKind::Modified],
            thresholds: vec![98.0, 95.0, 90.0],
            compare_noise: 0.05,
            blind_runs: 12,
            blind_noise: 0.01,
            jobs: 0,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.count == 0 {
            return bad("experiment.count must be >= 1".into());
        }
        let noise_ok = |n: &f64| (0.0..1.0).contains(n);
        if let Some(n) = self.noise_levels.iter().find(|n| !noise_ok(n)) {
            return bad(format!("experiment.noise_levels: {n} is outside [0, 1)"));
        }
        for (name, v) in [("compare_noise", self.compare_noise), ("blind_noise", self.blind_noise)] {
            if !noise_ok(&v) {
                return bad(format!("experiment.{name}: {v} is outside [0, 1)"));
            }
        }
        if self.smoothing_window == 0 {
            return bad("experiment.smoothing_window must be >= 1".into());
        }
        for (i, b) in self.matrix.iter().enumerate() {
            if b.subsets.is_empty() || b.noise_levels.is_empty() {
                return bad(format!("experiment.matrix[{i}] needs at least one subset and one noise level"));
            }
            if let Some(n) = b.noise_levels.iter().find(|n| !noise_ok(n)) {
                return bad(format!("experiment.matrix[{i}].noise_levels: {n} is outside [0, 1)"));
            }
        }
        if self.filters.is_empty() {
            return bad("experiment.filters must not be empty".into());
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(0.0..=100.0).contains(*t)) {
            return bad(format!("experiment.thresholds: {t} is outside [0, 100]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: SamplingConfig,
    pub solver: SolverConfig,
    pub filter: FilterConfig,
    pub experiment: ExperimentConfig,
}

/// Environment variable overriding both the sampling and experiment seeds.
pub const SEED_ENV: &str = "UKF_SEED";

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.solver.validate().map_err(|e| ConfigError::Invalid(format!("solver: {e}")))?;
        self.filter.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.experiment.validate()
    }

    /// Apply `UKF_SEED` if set.
    pub fn apply_seed_env(&mut self) -> Result<(), ConfigError> {
        match std::env::var(SEED_ENV) {
            Ok(v) => {
                let seed: u64 = v
                    .trim()
                    .parse()
                    .map_err(|_| ConfigError::Invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
                self.model.seed = seed;
                self.experiment.seed = seed;
                Ok(())
            }
            Err(_) => Ok(()),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// First 16 hex digits of the SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

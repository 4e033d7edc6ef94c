//! Run configuration file.
//!
//! Every section rejects unknown keys. Only `system.name` is mandatory; the
//! rest falls back to library defaults.

use std::path::Path;

use nbf::certifier::CertifyConfig;
use nbf::dynamics::DynamicsModel;
use nbf::noise::NoiseScale;
use nbf::partition::{BnBConfig, SplitMode};
use nbf::relaxation::BoundMode;
use nbf::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: SystemSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub certification: CertificationSection,
    #[serde(default)]
    pub noise_partition: NoisePartitionSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    /// Built-in benchmark: `linear`, `polynomial2d` or `dubins`.
    pub name: String,
    /// Whether the benchmark's noise vector holds variances or standard deviations.
    #[serde(default)]
    pub noise_scale: NoiseScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self { hidden: vec![128, 128, 128] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertificationSection {
    pub mode: BoundMode,
    pub t_gap: f64,
    pub max_regions: usize,
    pub max_iterations: usize,
    pub initial_grid: Vec<usize>,
    pub split: SplitMode,
    pub prune: bool,
    pub exit_value: f64,
}

impl Default for CertificationSection {
    fn default() -> Self {
        let c = CertifyConfig::default();
        Self {
            mode: c.mode,
            t_gap: c.bnb.t_gap,
            max_regions: c.bnb.max_regions,
            max_iterations: c.bnb.max_iterations,
            initial_grid: c.bnb.initial_grid,
            split: c.bnb.split,
            prune: c.bnb.prune,
            exit_value: c.exit_value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoisePartitionSection {
    pub cells_per_dim: usize,
    /// Half-width of the partitioned noise support in standard deviations.
    pub sigmas: f64,
}

impl Default for NoisePartitionSection {
    fn default() -> Self {
        let c = CertifyConfig::default();
        Self {
            cells_per_dim: c.noise_cells,
            sigmas: c.noise_sigmas,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.dynamics()?;
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return Err(CliError::Config("network.hidden needs at least one positive width".into()));
        }
        self.training.validate().map_err(|e| CliError::Config(format!("training: {e}")))?;
        self.certify_config().validate().map_err(|e| CliError::Config(format!("certification: {e}")))?;
        Ok(())
    }

    pub fn dynamics(&self) -> Result<DynamicsModel, CliError> {
        DynamicsModel::benchmark_with(&self.system.name, self.system.noise_scale).ok_or_else(|| {
            CliError::Config(format!(
                "system.name: unknown system `{}` (expected linear, polynomial2d or dubins)",
                self.system.name
            ))
        })
    }

    pub fn certify_config(&self) -> CertifyConfig {
        let c = &self.certification;
        CertifyConfig {
            mode: c.mode,
            bnb: BnBConfig {
                t_gap: c.t_gap,
                max_regions: c.max_regions,
                max_iterations: c.max_iterations,
                initial_grid: c.initial_grid.clone(),
                split: c.split,
                prune: c.prune,
                trace: false,
            },
            noise_cells: self.noise_partition.cells_per_dim,
            noise_sigmas: self.noise_partition.sigmas,
            exit_value: c.exit_value,
        }
    }
}

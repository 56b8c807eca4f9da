use std::path::{Path, PathBuf};

use hybeam::eval::{ChannelSpec, ExperimentSpec, MonteCarloConfig};
use hybeam::gd::GdConfig;
use hybeam::transceiver::{Constellation, SystemConfig};
use hybeam::unfold::TrainConfig;
use hybeam::{Error, Result};
use serde::{Deserialize, Serialize};

pub const OUTPUT_DIR_ENV: &str = "HYBEAM_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "hybeam-out";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

/// Channel counts written by `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            train: 500,
            validation: 50,
            test: 5000,
        }
    }
}

/// Architecture of a freshly initialised network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub layers: usize,
    /// Relative jitter of the initial step matrices.
    pub init_jitter: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            layers: 15,
            init_jitter: 0.1,
        }
    }
}

/// The whole run description; every command reads the sections it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub constellation: Constellation,
    pub system: SystemConfig,
    pub channel: ChannelSpec,
    pub dataset: DatasetConfig,
    pub gd: GdConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub monte_carlo: MonteCarloConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            output_dir: None,
            constellation: Constellation::Qpsk,
            system: SystemConfig::uniform(64, 8, 2, 8, 4, 3, 15.0),
            channel: ChannelSpec::default(),
            dataset: DatasetConfig::default(),
            gd: GdConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            monte_carlo: MonteCarloConfig::default(),
            experiment: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    /// Check every section; returns the system's warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let warnings = self.system.validate()?;
        self.constellation.validate()?;
        self.channel.clustered(&self.system).validate()?;
        self.gd.validate()?;
        self.train.validate()?;
        let d = &self.dataset;
        if d.train == 0 || d.validation == 0 || d.test == 0 {
            return Err(Error::Config("dataset sizes must be positive".into()));
        }
        if self.network.layers == 0 {
            return Err(Error::Config("the network needs at least one layer".into()));
        }
        if !(self.network.init_jitter >= 0.0) {
            return Err(Error::Config("init_jitter must be non-negative".into()));
        }
        if self.monte_carlo.chunk == 0 || self.monte_carlo.max_symbols == 0 {
            return Err(Error::Config("monte_carlo chunk and max_symbols must be positive".into()));
        }
        if let Some(spec) = &self.experiment {
            spec.validate()?;
        }
        Ok(warnings)
    }

    /// `--out`, then the config, then the environment, then the default.
    pub fn resolve_output_dir(&mut self, flag: Option<PathBuf>) -> PathBuf {
        let dir = flag
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
        self.output_dir = Some(dir.clone());
        dir
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SNR in dB of the first user, `P_T / sigma^2`.
    pub fn snr_db(&self) -> f64 {
        let s = self.system.noise_std_per_user[0];
        10.0 * (self.system.power_budget / (s * s)).log10()
    }
}

//! Run configuration: a flat TOML document. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use qefl_core::evolution::MutationConfig;
use qefl_core::federation::{AggregationMode, RoundConfig};
use qefl_core::privacy::PrivacyConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(String),
}

fn field(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShardKind {
    Iid,
    Dirichlet,
    PerClientSeed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub synthetic_n: usize,
    pub test_fraction: f64,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    /// Keep only the first N examples of the IDX files.
    pub idx_limit: Option<usize>,

    pub shard: ShardKind,
    pub dirichlet_alpha: f64,

    pub hidden_dims: Vec<usize>,

    pub n_clients: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub variants: usize,
    pub mutation_sigma: f64,
    pub privacy_enabled: bool,
    pub noise_sigma: f64,
    pub clip_norm: Option<f64>,
    pub dp_delta: f64,
    pub rounds: usize,
    pub dropout_prob: f64,
    pub aggregation: AggregationMode,
    pub master_seed: u64,

    /// Client whose data is used for the mutation table.
    pub table1_client: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Synthetic,
            synthetic_n: 1000,
            test_fraction: 0.3,
            idx_images: None,
            idx_labels: None,
            idx_limit: None,
            shard: ShardKind::Iid,
            dirichlet_alpha: 0.5,
            hidden_dims: vec![32, 32],
            n_clients: 5,
            local_epochs: 5,
            learning_rate: 0.05,
            batch_size: 32,
            variants: 10,
            mutation_sigma: 0.1,
            privacy_enabled: true,
            noise_sigma: 0.01,
            clip_norm: None,
            dp_delta: 1e-5,
            rounds: 20,
            dropout_prob: 0.0,
            aggregation: AggregationMode::Uniform,
            master_seed: 42,
            table1_client: 0,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Checks that do not need the data. Cross-field checks against the
    /// training-set size happen once the data is built.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(field(name, "must be at least 1"))
            } else {
                Ok(())
            }
        };
        positive("n_clients", self.n_clients)?;
        positive("local_epochs", self.local_epochs)?;
        positive("batch_size", self.batch_size)?;
        positive("variants", self.variants)?;
        positive("rounds", self.rounds)?;
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(field(
                "hidden_dims",
                "needs at least one layer, all widths >= 1",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(field("learning_rate", "must be a positive number"));
        }
        if !(self.mutation_sigma >= 0.0 && self.mutation_sigma.is_finite()) {
            return Err(field("mutation_sigma", "must be a finite number >= 0"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(field("noise_sigma", "must be a finite number >= 0"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(field("clip_norm", "must be a positive number"));
            }
        }
        if !(self.dp_delta > 0.0 && self.dp_delta < 1.0) {
            return Err(field("dp_delta", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(field("dropout_prob", "must lie in [0, 1]"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(field("test_fraction", "must lie in (0, 1)"));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(field("dirichlet_alpha", "must be a positive number"));
        }
        if self.table1_client >= self.n_clients {
            return Err(field("table1_client", "must be a valid client index"));
        }
        match self.dataset {
            DatasetKind::Synthetic => {
                if self.synthetic_n < 2 {
                    return Err(field("synthetic_n", "must be at least 2"));
                }
            }
            DatasetKind::Idx => {
                if self.idx_images.is_none() {
                    return Err(field("idx_images", "required when dataset = \"idx\""));
                }
                if self.idx_labels.is_none() {
                    return Err(field("idx_labels", "required when dataset = \"idx\""));
                }
                if self.shard == ShardKind::PerClientSeed {
                    return Err(field(
                        "shard",
                        "per_client_seed only applies to synthetic data",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Number of training examples the data pipeline will produce.
    pub fn train_size(&self, total: usize) -> usize {
        total - (self.test_fraction * total as f64).round() as usize
    }

    /// Reject more clients than training examples.
    pub fn validate_against(&self, train_size: usize) -> Result<(), ConfigError> {
        if self.n_clients > train_size {
            return Err(field(
                "n_clients",
                format!(
                    "{} clients but only {train_size} training examples",
                    self.n_clients
                ),
            ));
        }
        Ok(())
    }

    pub fn round_config(&self, parallel: bool) -> RoundConfig {
        RoundConfig {
            n_clients: self.n_clients,
            local_epochs: self.local_epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            mutation: MutationConfig {
                sigma: self.mutation_sigma,
                k: self.variants,
            },
            privacy: PrivacyConfig {
                enabled: self.privacy_enabled,
                sigma_p: self.noise_sigma,
                clip_norm: self.clip_norm,
                delta: self.dp_delta,
            },
            rounds: self.rounds,
            dropout_prob: self.dropout_prob,
            aggregation: self.aggregation,
            master_seed: self.master_seed,
            parallel,
        }
    }
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aae::{AaeArchitecture, LocalTrainConfig};
use crate::baselines::PolicyKind;
use crate::dataset::synthetic::SyntheticConfig;
use crate::dataset::{PartitionConfig, RequestMode};
use crate::elastic_fl::FlConfig;
use crate::env::{CostParams, Topology};
use crate::error::{Error, Result};
use crate::maddpg::MaddpgConfig;
use crate::prediction::PredictionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    #[default]
    Synthetic,
    /// `ratings.dat`, `users.dat` and `movies.dat` under `path`.
    Movielens,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    pub path: Option<PathBuf>,
    /// Keep only the most-rated contents.
    pub top_contents: Option<usize>,
    pub synthetic: SyntheticConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AaeConfig {
    pub hidden: usize,
    pub latent: usize,
    pub discriminator_hidden: usize,
}

impl Default for AaeConfig {
    fn default() -> Self {
        let a = AaeArchitecture::default();
        AaeConfig {
            hidden: a.hidden,
            latent: a.latent,
            discriminator_hidden: a.discriminator_hidden,
        }
    }
}

impl AaeConfig {
    pub fn architecture(&self, catalog_size: usize) -> AaeArchitecture {
        AaeArchitecture {
            catalog_size,
            hidden: self.hidden,
            latent: self.latent,
            discriminator_hidden: self.discriminator_hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    #[default]
    FullyConnected,
    Isolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub costs: CostParams,
    /// Cache capacity `C`.
    pub capacity: usize,
    pub topology: TopologyKind,
    pub requests_per_ue: usize,
    pub request_mode: RequestMode,
    pub zipf_exponent: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            costs: CostParams::default(),
            capacity: 5,
            topology: TopologyKind::FullyConnected,
            requests_per_ue: 5,
            request_mode: RequestMode::TestReplay,
            zipf_exponent: 1.0,
        }
    }
}

impl EnvSection {
    pub fn topology(&self, n_sbs: usize) -> Topology {
        match self.topology {
            TopologyKind::FullyConnected => Topology::fully_connected(n_sbs),
            TopologyKind::Isolated => Topology::isolated(n_sbs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub epsilon: f64,
    /// C-epsilon-greedy counts requests over all past slots when true.
    pub cumulative_counts: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            epsilon: 0.1,
            cumulative_counts: true,
        }
    }
}

/// Everything one experiment needs. Loaded from TOML; every key is optional
/// and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schemes: Vec<PolicyKind>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Run UEs of one SBS in parallel during federated rounds.
    pub parallel: bool,
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    pub aae: AaeConfig,
    pub fl: FlConfig,
    pub prediction: PredictionConfig,
    pub env: EnvSection,
    pub maddpg: MaddpgConfig,
    pub baseline: BaselineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schemes: vec![PolicyKind::Cefmr],
            seeds: vec![0],
            output_dir: PathBuf::from("out"),
            parallel: false,
            dataset: DatasetConfig::default(),
            partition: PartitionConfig::default(),
            aae: AaeConfig::default(),
            fl: FlConfig::default(),
            prediction: PredictionConfig::default(),
            env: EnvSection::default(),
            maddpg: MaddpgConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Small synthetic setup that runs every scheme in a few seconds.
    pub fn toy() -> Self {
        ExperimentConfig {
            schemes: PolicyKind::ALL.to_vec(),
            dataset: DatasetConfig {
                synthetic: SyntheticConfig {
                    users: 120,
                    catalog_size: 30,
                    ratings_per_user: 10,
                    groups: 2,
                    heterogeneity: 0.5,
                    ..SyntheticConfig::default()
                },
                ..DatasetConfig::default()
            },
            partition: PartitionConfig {
                n_sbs: 2,
                ues_per_sbs: 2,
                users_per_ue: 25,
                ..PartitionConfig::default()
            },
            aae: AaeConfig {
                hidden: 16,
                latent: 4,
                discriminator_hidden: 8,
            },
            fl: FlConfig {
                rounds: 3,
                local: LocalTrainConfig {
                    iterations: 5,
                    ..LocalTrainConfig::default()
                },
                ..FlConfig::default()
            },
            prediction: PredictionConfig {
                active_fraction_m: 5,
                neighbors_k: 3,
                f_p: 6,
            },
            env: EnvSection {
                capacity: 3,
                requests_per_ue: 3,
                ..EnvSection::default()
            },
            maddpg: MaddpgConfig {
                episodes: 3,
                slots: 10,
                test_episodes: 2,
                batch_size: 16,
                buffer_capacity: 200,
                hidden: vec![16],
                checkpoint_every: 1,
                ..MaddpgConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks the whole configuration before any computation.
    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("at least one scheme and one seed are required".into()));
        }
        let mut s = self.schemes.clone();
        s.sort();
        s.dedup();
        if s.len() != self.schemes.len() {
            return Err(Error::Config("schemes are listed more than once".into()));
        }
        match self.dataset.source {
            DatasetSource::Synthetic => self.dataset.synthetic.validate()?,
            DatasetSource::Movielens => match &self.dataset.path {
                None => return Err(Error::Config("dataset.path is required for movielens".into())),
                Some(p) if !p.is_dir() => {
                    return Err(Error::Config(format!("dataset.path {} is not a directory", p.display())))
                }
                Some(_) => {}
            },
        }
        if self.dataset.top_contents == Some(0) {
            return Err(Error::Config("dataset.top_contents must be positive".into()));
        }
        self.partition.validate()?;
        if self.aae.hidden == 0 || self.aae.latent == 0 || self.aae.discriminator_hidden == 0 {
            return Err(Error::Config("AAE widths must be positive".into()));
        }
        self.fl.validate()?;
        self.prediction.validate()?;
        self.env.costs.validate()?;
        if self.env.capacity == 0 || self.env.capacity >= self.prediction.f_p {
            return Err(Error::Config(format!(
                "cache capacity C = {} must satisfy 0 < C < F_p = {}",
                self.env.capacity, self.prediction.f_p
            )));
        }
        if self.env.requests_per_ue == 0 {
            return Err(Error::Config("env.requests_per_ue must be positive".into()));
        }
        if !(self.env.zipf_exponent >= 0.0 && self.env.zipf_exponent.is_finite()) {
            return Err(Error::Config("env.zipf_exponent must be finite and non-negative".into()));
        }
        self.maddpg.validate()?;
        if !(0.0..=1.0).contains(&self.baseline.epsilon) {
            return Err(Error::Config("baseline.epsilon must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

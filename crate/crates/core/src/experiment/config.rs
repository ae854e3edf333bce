use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::MinorClasses;
use crate::graph::Topology;
use crate::model::{Activation, OptimizerConfig, OptimizerKind, Schedule};
use crate::protocol::{InitMode, Scheme};
use crate::{Error, Result};

pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const DEFAULT_BASE_LR: f64 = 1e-4;
/// Networks up to this size use one consensus step and a step schedule.
pub const SMALL_NETWORK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Blobs,
    Mnist,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    Iid,
    #[default]
    Heterogeneous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobsConfig {
    pub num_classes: usize,
    pub dim: usize,
    /// Training samples per class.
    pub per_class: usize,
    /// Held-out samples per class.
    pub test_per_class: usize,
    pub spread: f64,
    /// Seed of the dataset draw; fixed across run seeds.
    pub seed: u64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            dim: 16,
            per_class: 200,
            test_per_class: 50,
            spread: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

/// One scheme or all five.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SchemeSelection {
    All,
    One(Scheme),
}

impl SchemeSelection {
    pub fn schemes(self) -> Vec<Scheme> {
        match self {
            SchemeSelection::All => Scheme::ALL.to_vec(),
            SchemeSelection::One(s) => vec![s],
        }
    }
}

impl FromStr for SchemeSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(SchemeSelection::All);
        }
        s.parse().map(SchemeSelection::One).map_err(|_| {
            Error::Config(format!(
                "unknown scheme `{s}`, expected one of: all, centralized, fedavg, simple, metropolis, dynaweight"
            ))
        })
    }
}

impl TryFrom<String> for SchemeSelection {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SchemeSelection> for String {
    fn from(s: SchemeSelection) -> String {
        s.to_string()
    }
}

impl fmt::Display for SchemeSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeSelection::All => f.write_str("all"),
            SchemeSelection::One(s) => s.fmt(f),
        }
    }
}

fn default_minor_classes() -> MinorClasses {
    MinorClasses::Fixed(3)
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

fn default_base_lr() -> f64 {
    DEFAULT_BASE_LR
}

/// A JSON experiment description. Unset optional fields are filled by
/// [`ExperimentConfig::apply_defaults`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    #[serde(default)]
    pub blobs: BlobsConfig,
    #[serde(default)]
    pub mnist: Option<MnistPaths>,
    pub topology: Topology,
    pub n_servers: usize,
    pub scheme: SchemeSelection,
    #[serde(default)]
    pub partition: PartitionKind,
    #[serde(default = "default_minor_classes")]
    pub minor_classes: MinorClasses,
    #[serde(default)]
    pub balanced_per_class: Option<usize>,
    /// Hidden layer widths; input and output sizes come from the data.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default)]
    pub schedule: Option<Schedule>,
    pub epochs: usize,
    #[serde(default)]
    pub consensus_steps: Option<usize>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub init: InitMode,
    /// Write every server's parameters every this many epochs.
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default)]
    pub record_timing: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.apply_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fills the size-dependent defaults: one consensus step and halving
    /// every 20 epochs up to 16 servers; two steps and a held exponential
    /// decay beyond.
    pub fn apply_defaults(&mut self) {
        let small = self.n_servers <= SMALL_NETWORK;
        self.consensus_steps
            .get_or_insert(if small { 1 } else { 2 });
        self.schedule.get_or_insert(if small {
            Schedule::HalveEvery { every: 20 }
        } else {
            Schedule::ExpDecayToFloor {
                hold_until: 100.min(self.epochs.saturating_sub(1)),
                floor: 1e-6,
                total_epochs: self.epochs,
            }
        });
    }

    /// Changes the run length, stretching schedules that are defined over
    /// the whole run.
    pub fn set_epochs(&mut self, epochs: usize) {
        self.epochs = epochs;
        match &mut self.schedule {
            Some(Schedule::ExpDecayToFloor {
                hold_until,
                total_epochs,
                ..
            }) => {
                *total_epochs = epochs;
                *hold_until = (*hold_until).min(epochs.saturating_sub(1));
            }
            Some(Schedule::LinearDecay { total_epochs }) => *total_epochs = epochs,
            _ => {}
        }
    }

    pub fn consensus_steps(&self) -> usize {
        self.consensus_steps.unwrap_or(1)
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            base_lr: self.base_lr,
            schedule: self.schedule.unwrap_or(Schedule::Constant),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_servers", self.n_servers),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("consensus_steps", self.consensus_steps()),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config("base_lr must be positive".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        if self.n_servers < self.topology.min_nodes() {
            return Err(Error::Config(format!(
                "topology {} needs at least {} servers, got {}",
                self.topology,
                self.topology.min_nodes(),
                self.n_servers
            )));
        }
        self.optimizer_config().validate()?;
        match self.dataset {
            DatasetKind::Blobs => {
                let b = &self.blobs;
                if b.num_classes == 0 || b.dim == 0 || b.per_class == 0 || b.test_per_class == 0 {
                    return Err(Error::Config("blobs counts must be positive".into()));
                }
                if !(b.spread > 0.0 && b.spread.is_finite()) {
                    return Err(Error::Config("blobs.spread must be positive".into()));
                }
            }
            DatasetKind::Mnist => {
                let paths = self.mnist.as_ref().ok_or_else(|| {
                    Error::Config(
                        "dataset mnist requires an `mnist` section with file paths".into(),
                    )
                })?;
                for p in [
                    &paths.train_images,
                    &paths.train_labels,
                    &paths.test_images,
                    &paths.test_labels,
                ] {
                    if !p.exists() {
                        return Err(Error::Config(format!("file not found: {}", p.display())));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text)
}

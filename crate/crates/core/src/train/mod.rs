//! Joint training of students and teachers.
//!
//! An epoch is one pass over every in-scope sample. Samples are grouped into
//! batches from a single home dataset, so the supervised terms of a batch
//! share one label space, and the batch list is shuffled across datasets.
//! Each batch takes one AdamW step on the batch-mean combined loss.

mod ablation;
mod checkpoint;
mod schedule;
mod trainer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::model::{EnsembleInput, InitPolicy};

pub use ablation::{run_ablation_grid, AblationCell, AblationGrid, AblationRow, AblationTable};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use schedule::{build_batches, Batch, DataScope, SampleRef, Task, TaskKind, TaskSchedule};
pub use trainer::{evaluate_model, fit, fit_with, FitOptions, FitOutcome, Trainer};

/// Which samples feed the distillation terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillScenario {
    /// Supervised terms only.
    None,
    /// Each student is distilled on its own dataset's training samples.
    SingleDataset,
    /// Students are distilled on an unlabeled pool only.
    ExternalPool,
    /// Every student is distilled on the training samples of every dataset.
    AllDatasets,
}

impl DistillScenario {
    pub const ALL: [DistillScenario; 4] = [
        DistillScenario::None,
        DistillScenario::SingleDataset,
        DistillScenario::ExternalPool,
        DistillScenario::AllDatasets,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistillScenario::None => "none",
            DistillScenario::SingleDataset => "single_dataset",
            DistillScenario::ExternalPool => "external_pool",
            DistillScenario::AllDatasets => "all_datasets",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DistillScenario::None => "No Distillation",
            DistillScenario::SingleDataset => "Single Dataset",
            DistillScenario::ExternalPool => "External Pool",
            DistillScenario::AllDatasets => "All Datasets",
        }
    }
}

impl fmt::Display for DistillScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistillScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|m| m.name()).collect();
            Error::Config(format!("unknown distill_scenario `{s}`; valid: {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossWeights,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub burn_in_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub ensemble_input: EnsembleInput,
    pub distill_scenario: DistillScenario,
    /// Cap on unlabeled samples used by the pool scenario.
    pub external_pool_size: usize,
    pub adjust_hidden: usize,
    /// When positive, caps the adjustment hidden width at this fraction of
    /// the segment width.
    pub adjust_hidden_cap: f64,
    pub adjust_dropout: f64,
    /// Start student heads from the pretrained experts.
    pub warm_start: bool,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossWeights::default(),
            lr: 1e-5,
            weight_decay: 3e-3,
            epochs: 500,
            burn_in_epochs: 25,
            batch_size: 256,
            seed: 0,
            ensemble_input: EnsembleInput::AdjustedFeatures,
            distill_scenario: DistillScenario::AllDatasets,
            external_pool_size: 20_000,
            adjust_hidden: 256,
            adjust_hidden_cap: 0.0,
            adjust_dropout: 0.75,
            warm_start: true,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Settings for synthetic worlds of a few hundred samples per dataset.
    /// With so few batches per epoch, the step size is raised so that the
    /// same 500 epochs cover a comparable optimization distance.
    pub fn desk() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 32,
            external_pool_size: 1000,
            adjust_hidden_cap: 0.25,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be ≥ 0, got {}", self.weight_decay)));
        }
        if self.burn_in_epochs > self.epochs {
            return Err(Error::Config(format!(
                "burn_in_epochs {} exceeds epochs {}",
                self.burn_in_epochs, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.adjust_dropout) {
            return Err(Error::Config(format!("adjust_dropout {} not in [0, 1)", self.adjust_dropout)));
        }
        if self.adjust_hidden == 0 {
            return Err(Error::Config("adjust_hidden must be at least 1".into()));
        }
        Ok(())
    }

    pub fn init_policy(&self) -> InitPolicy {
        InitPolicy {
            adjust_hidden: self.adjust_hidden,
            adjust_hidden_cap: self.adjust_hidden_cap,
            adjust_dropout: self.adjust_dropout,
            k: self.loss.k,
            input_mode: self.ensemble_input,
            warm_start: self.warm_start,
        }
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let text = self.to_toml();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

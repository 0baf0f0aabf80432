use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, DistillScenario, TrainConfig};
use crate::error::{Error, Result};
use crate::math::LbfgsSettings;
use crate::metrics::ModelKind;
use crate::model::EnsembleInput;
use crate::store::{EmbeddingStore, Split};
use crate::synth::{pretrain_experts, ExpertOracle};

/// One training configuration of an ablation grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationCell {
    pub name: String,
    pub label: String,
    pub input: EnsembleInput,
    pub scenario: DistillScenario,
}

impl AblationCell {
    fn new(name: &str, label: &str, input: EnsembleInput, scenario: DistillScenario) -> Self {
        Self {
            name: name.into(),
            label: label.into(),
            input,
            scenario,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AblationGrid {
    /// Four teacher-input rows (distilling on all datasets) followed by four
    /// distillation-scope rows (with adjusted features).
    Standard,
    /// Every input mode crossed with every scenario.
    Full,
    /// Cells picked by name from either grid.
    Named(Vec<String>),
}

impl AblationGrid {
    pub fn standard_cells() -> Vec<AblationCell> {
        use DistillScenario as S;
        use EnsembleInput as I;
        vec![
            AblationCell::new("predictions", "Predictions", I::Predictions, S::AllDatasets),
            AblationCell::new("base_features", "Base Features", I::BaseFeatures, S::AllDatasets),
            AblationCell::new("adjusted_features", "Adjusted Features", I::AdjustedFeatures, S::AllDatasets),
            AblationCell::new(
                "adjusted_plus_predictions",
                "Adjusted Features + Predictions",
                I::AdjustedPlusPredictions,
                S::AllDatasets,
            ),
            AblationCell::new("no_distillation", "No Distillation", I::AdjustedFeatures, S::None),
            AblationCell::new("single_dataset", "Single Dataset", I::AdjustedFeatures, S::SingleDataset),
            AblationCell::new("external_pool", "External Pool", I::AdjustedFeatures, S::ExternalPool),
            AblationCell::new("all_datasets", "All Datasets", I::AdjustedFeatures, S::AllDatasets),
        ]
    }

    pub fn full_cells() -> Vec<AblationCell> {
        EnsembleInput::ALL
            .into_iter()
            .flat_map(|input| {
                DistillScenario::ALL.into_iter().map(move |scenario| {
                    AblationCell::new(
                        &format!("{}+{}", input.name(), scenario.name()),
                        &format!("{} / {}", input.label(), scenario.label()),
                        input,
                        scenario,
                    )
                })
            })
            .collect()
    }

    /// `standard`, `full`, or a comma-separated list of cell names.
    pub fn parse(spec: &str) -> Result<Self> {
        let grid = match spec.trim() {
            "standard" => Self::Standard,
            "full" => Self::Full,
            list => Self::Named(list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()),
        };
        grid.cells()?;
        Ok(grid)
    }

    pub fn cells(&self) -> Result<Vec<AblationCell>> {
        match self {
            Self::Standard => Ok(Self::standard_cells()),
            Self::Full => Ok(Self::full_cells()),
            Self::Named(names) => {
                if names.is_empty() {
                    return Err(Error::Config("empty ablation grid".into()));
                }
                let known: Vec<AblationCell> = Self::standard_cells().into_iter().chain(Self::full_cells()).collect();
                names
                    .iter()
                    .map(|n| {
                        known.iter().find(|c| &c.name == n).cloned().ok_or_else(|| {
                            let valid: Vec<&str> = known.iter().map(|c| c.name.as_str()).collect();
                            Error::Config(format!("unknown ablation scenario `{n}`; valid: {}", valid.join(", ")))
                        })
                    })
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: AblationCell,
    /// Test acc@1 per dataset after the last epoch.
    pub teacher: Vec<f64>,
    pub student: Vec<f64>,
    /// Test acc@1 per dataset before training.
    pub initial_teacher: Vec<f64>,
    pub initial_student: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub datasets: Vec<String>,
    /// Test acc@1 of the initial experts.
    pub experts: Vec<f64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Teacher and student acc@1 (percent) per dataset, one line per cell.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<34}", "Scenario");
        for d in &self.datasets {
            let _ = write!(out, "| {:<17}", d);
        }
        out.push('\n');
        let _ = write!(out, "{:<34}", "");
        for _ in &self.datasets {
            let _ = write!(out, "| {:>8} {:>8}", "Teacher", "Student");
        }
        out.push('\n');
        let _ = write!(out, "{:<34}", "Initial Experts");
        for e in &self.experts {
            let _ = write!(out, "| {:>8} {:>8.2}", "-", 100.0 * e);
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:<34}", row.cell.label);
            for (t, s) in row.teacher.iter().zip(&row.student) {
                let _ = write!(out, "| {:>8.2} {:>8.2}", 100.0 * t, 100.0 * s);
            }
            out.push('\n');
        }
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Report(e.to_string()))
    }
}

/// One run per cell, all from the same seed (hence the same initial
/// parameters) and the same experts. Cells run in parallel.
pub fn run_ablation_grid(
    store: &EmbeddingStore,
    base: &TrainConfig,
    cells: &[AblationCell],
    experts: Option<&ExpertOracle>,
) -> Result<AblationTable> {
    base.validate()?;
    let experts = match experts {
        Some(e) => e.clone(),
        None => pretrain_experts(store, &LbfgsSettings::default())?,
    };
    let n = store.num_experts();
    let rows = cells
        .par_iter()
        .map(|cell| {
            let config = TrainConfig {
                ensemble_input: cell.input,
                distill_scenario: cell.scenario,
                ..base.clone()
            };
            let out = fit(store, &config, Some(&experts))?;
            let acc = |rows: &[crate::metrics::MetricRow], kind| -> Vec<f64> {
                (0..n)
                    .map(|d| {
                        rows.iter()
                            .find(|r| r.model == kind && r.dataset == d && r.split == Split::Test)
                            .map_or(f64::NAN, |r| r.values.acc1)
                    })
                    .collect()
            };
            let last = out.history.last().map_or(&out.initial.rows, |s| &s.rows);
            Ok(AblationRow {
                cell: cell.clone(),
                teacher: acc(last, ModelKind::Teacher),
                student: acc(last, ModelKind::Student),
                initial_teacher: acc(&out.initial.rows, ModelKind::Teacher),
                initial_student: acc(&out.initial.rows, ModelKind::Student),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let experts_acc = (0..n)
        .map(|d| experts.evaluate(store, d, Split::Test).map(|v| v.acc1))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable {
        datasets: store.experts().iter().map(|s| s.name.clone()).collect(),
        experts: experts_acc,
        rows,
    })
}

use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::{DistillScenario, TrainConfig};
use crate::error::{Error, Result};
use crate::loss::KdScope;
use crate::rng::{SeedStreams, Stream};
use crate::store::{EmbeddingStore, Split};

/// Position of a record in a store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleRef {
    pub dataset: usize,
    pub split: Split,
    pub index: usize,
}

/// Samples sharing one home dataset, with the terms they contribute.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub home: usize,
    pub samples: Vec<SampleRef>,
    /// Whether labels feed the supervised terms.
    pub supervised: bool,
    /// Which distillation terms the samples feed once distillation is on.
    pub kd: KdScope,
}

impl Batch {
    /// `(sample, student)` pairs this batch distills into.
    pub fn kd_pairs(&self, num_models: usize) -> Vec<(SampleRef, usize)> {
        let models: Vec<usize> = match self.kd {
            KdScope::Off => vec![],
            KdScope::Home if self.home < num_models => vec![self.home],
            KdScope::Home => vec![],
            KdScope::All => (0..num_models).collect(),
        };
        self.samples
            .iter()
            .flat_map(|&s| models.iter().map(move |&m| (s, m)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    StudentClassification,
    TeacherClassification,
    Distillation,
}

/// The data a task draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DataScope {
    Inactive,
    /// Labeled training samples of the model's own dataset.
    HomeTrain,
    /// Training samples of every dataset.
    AllTrain,
    /// The unlabeled pool.
    UnlabeledPool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Task {
    pub kind: TaskKind,
    pub model: usize,
    pub scope: DataScope,
}

/// The 3n jointly optimized tasks of a run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSchedule {
    pub tasks: Vec<Task>,
}

impl TaskSchedule {
    pub fn new(num_models: usize, scenario: DistillScenario) -> Self {
        let kd_scope = match scenario {
            DistillScenario::None => DataScope::Inactive,
            DistillScenario::SingleDataset => DataScope::HomeTrain,
            DistillScenario::ExternalPool => DataScope::UnlabeledPool,
            DistillScenario::AllDatasets => DataScope::AllTrain,
        };
        let mut tasks = Vec::with_capacity(3 * num_models);
        for (kind, scope) in [
            (TaskKind::StudentClassification, DataScope::HomeTrain),
            (TaskKind::TeacherClassification, DataScope::HomeTrain),
            (TaskKind::Distillation, kd_scope),
        ] {
            tasks.extend((0..num_models).map(|model| Task { kind, model, scope }));
        }
        Self { tasks }
    }

    pub fn of_kind(&self, kind: TaskKind) -> impl Iterator<Item = &Task> {
        self.tasks.iter().filter(move |t| t.kind == kind)
    }
}

/// Unlabeled records used by the pool scenario: the first `cap` of them in
/// dataset order.
pub(crate) fn pool_refs(store: &EmbeddingStore, cap: usize) -> Vec<SampleRef> {
    (0..store.manifest().len())
        .flat_map(|dataset| {
            (0..store.count(dataset, Split::Unlabeled)).map(move |index| SampleRef {
                dataset,
                split: Split::Unlabeled,
                index,
            })
        })
        .take(cap)
        .collect()
}

/// The batches of one epoch, in training order.
pub fn build_batches(store: &EmbeddingStore, config: &TrainConfig, epoch: usize) -> Result<Vec<Batch>> {
    let mut rng = SeedStreams::new(config.seed).rng(Stream::Shuffle, epoch as u64);
    let labeled_kd = match config.distill_scenario {
        DistillScenario::None | DistillScenario::ExternalPool => KdScope::Off,
        DistillScenario::SingleDataset => KdScope::Home,
        DistillScenario::AllDatasets => KdScope::All,
    };
    let bs = config.batch_size.max(1);
    let mut batches = Vec::new();
    for dataset in 0..store.num_experts() {
        let mut refs: Vec<SampleRef> = (0..store.count(dataset, Split::Train))
            .map(|index| SampleRef {
                dataset,
                split: Split::Train,
                index,
            })
            .collect();
        refs.shuffle(&mut rng);
        batches.extend(refs.chunks(bs).map(|c| Batch {
            home: dataset,
            samples: c.to_vec(),
            supervised: true,
            kd: labeled_kd,
        }));
    }
    if batches.is_empty() {
        return Err(Error::Config("no labeled training samples in the store".into()));
    }
    if config.distill_scenario == DistillScenario::ExternalPool {
        let pool = pool_refs(store, config.external_pool_size);
        if pool.is_empty() {
            return Err(Error::Config("external_pool scenario needs unlabeled samples in the store".into()));
        }
        let homes: BTreeSet<usize> = pool.iter().map(|r| r.dataset).collect();
        for home in homes {
            let mut refs: Vec<SampleRef> = pool.iter().copied().filter(|r| r.dataset == home).collect();
            refs.shuffle(&mut rng);
            batches.extend(refs.chunks(bs).map(|c| Batch {
                home,
                samples: c.to_vec(),
                supervised: false,
                kd: KdScope::All,
            }));
        }
    }
    batches.shuffle(&mut rng);
    Ok(batches)
}

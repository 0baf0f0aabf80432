use std::path::PathBuf;

use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::schedule::{build_batches, Batch};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::loss::{combined_loss, KdScope};
use crate::math::{AdamW, LbfgsSettings, Tensor2};
use crate::metrics::{
    assemble_report, evaluate, CurvePoint, MetricRow, MetricsReport, MetricsSnapshot, ModelKind,
};
use crate::model::{init_models, BatchMasks, JediModel};
use crate::rng::{SeedStreams, Stream};
use crate::store::{EmbeddingStore, SampleRecord, Split};
use crate::synth::{pretrain_experts, ExpertOracle};

const EVAL_SPLITS: [Split; 2] = [Split::Val, Split::Test];
const EVAL_CHUNK: usize = 512;

/// Loss sums over the samples of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct BatchStats {
    pub cls: f64,
    pub kd: f64,
    pub seen: usize,
    pub skipped: usize,
}

/// A run in progress: model, optimizer state and metric history.
pub struct Trainer<'s> {
    store: &'s EmbeddingStore,
    config: TrainConfig,
    hash: String,
    model: JediModel,
    optimizer: AdamW,
    experts: ExpertOracle,
    expert_rows: Vec<MetricRow>,
    initial: MetricsSnapshot,
    history: Vec<MetricsSnapshot>,
    next_epoch: usize,
}

/// Fills `loss.dataset_sizes` from the store when unset.
fn resolve(store: &EmbeddingStore, config: &TrainConfig) -> Result<TrainConfig> {
    config.validate()?;
    let mut config = config.clone();
    let n = store.num_experts();
    if config.loss.dataset_sizes.is_empty() {
        config.loss.dataset_sizes = store
            .experts()
            .iter()
            .map(|s| if s.train_size > 0 { s.train_size } else { store.count(s.id, Split::Train) })
            .collect();
    }
    if config.loss.dataset_sizes.len() != n {
        return Err(Error::Config(format!(
            "loss.dataset_sizes has {} entries for {n} datasets",
            config.loss.dataset_sizes.len()
        )));
    }
    config.loss.validate()?;
    Ok(config)
}

impl<'s> Trainer<'s> {
    pub fn new(store: &'s EmbeddingStore, config: &TrainConfig, experts: ExpertOracle) -> Result<Self> {
        let config = resolve(store, config)?;
        if experts.heads.len() != store.num_experts() {
            return Err(Error::Config(format!(
                "{} expert heads for {} datasets",
                experts.heads.len(),
                store.num_experts()
            )));
        }
        let model = init_models(
            &store.segment_dims(),
            &store.num_classes(),
            config.seed,
            &config.init_policy(),
            Some(&experts.heads),
        )?;
        let mut expert_rows = Vec::new();
        for dataset in 0..store.num_experts() {
            for split in EVAL_SPLITS {
                if store.count(dataset, split) > 0 {
                    expert_rows.push(MetricRow {
                        model: ModelKind::Expert,
                        dataset,
                        split,
                        values: experts.evaluate(store, dataset, split)?,
                    });
                }
            }
        }
        let mut trainer = Self {
            store,
            hash: config.hash(),
            optimizer: AdamW::new(config.lr, config.weight_decay),
            config,
            model,
            experts,
            expert_rows,
            initial: MetricsSnapshot {
                epoch: None,
                config_hash: String::new(),
                rows: vec![],
                loss_cls: 0.0,
                loss_kd: 0.0,
                skipped_unlabeled: 0,
            },
            history: Vec::new(),
            next_epoch: 0,
        };
        trainer.initial = trainer.snapshot(None, 0.0, 0.0, 0)?;
        Ok(trainer)
    }

    /// Continues a run from a checkpoint written with the same configuration.
    pub fn resume(
        store: &'s EmbeddingStore,
        config: &TrainConfig,
        experts: ExpertOracle,
        checkpoint: &Checkpoint,
    ) -> Result<Self> {
        let mut t = Self::new(store, config, experts)?;
        if checkpoint.config_hash != t.hash || checkpoint.seed != t.config.seed {
            return Err(Error::Checkpoint {
                path: "<resume>".into(),
                msg: format!(
                    "written for config {} (seed {}), this run is {} (seed {})",
                    checkpoint.config_hash, checkpoint.seed, t.hash, t.config.seed
                ),
            });
        }
        if checkpoint.epoch > t.config.epochs || checkpoint.history.len() != checkpoint.epoch {
            return Err(Error::Checkpoint {
                path: "<resume>".into(),
                msg: format!("inconsistent epoch count {}", checkpoint.epoch),
            });
        }
        checkpoint.restore(&mut t.model)?;
        t.history = checkpoint.history.clone();
        t.next_epoch = checkpoint.epoch;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn model(&self) -> &JediModel {
        &self.model
    }

    pub fn experts(&self) -> &ExpertOracle {
        &self.experts
    }

    pub fn initial(&self) -> &MetricsSnapshot {
        &self.initial
    }

    pub fn history(&self) -> &[MetricsSnapshot] {
        &self.history
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.next_epoch
    }

    pub fn is_done(&self) -> bool {
        self.next_epoch >= self.config.epochs
    }

    pub fn checkpoint(&mut self) -> Checkpoint {
        Checkpoint::capture(&mut self.model, self.next_epoch, self.config.seed, &self.hash, &self.history)
    }

    fn record(&self, r: &crate::train::SampleRef) -> &'s SampleRecord {
        &self.store.records(r.dataset, r.split)[r.index]
    }

    /// Trains one epoch and records its metrics.
    pub fn run_epoch(&mut self) -> Result<&MetricsSnapshot> {
        let epoch = self.next_epoch;
        let batches = build_batches(self.store, &self.config, epoch)?;
        let kd_on = epoch >= self.config.burn_in_epochs && self.config.loss.gamma > 0.0;
        let mut dropout_rng = SeedStreams::new(self.config.seed).rng(Stream::Dropout, epoch as u64);
        let (mut cls_sum, mut kd_sum, mut seen, mut skipped) = (0.0, 0.0, 0usize, 0usize);

        for (b, batch) in batches.iter().enumerate() {
            let masks = self.model.sample_masks(batch.samples.len(), &mut dropout_rng);
            let stats = self.train_batch(epoch, b, batch, &masks, kd_on)?;
            cls_sum += stats.cls;
            kd_sum += stats.kd;
            seen += stats.seen;
            skipped += stats.skipped;
        }

        let denom = seen.max(1) as f64;
        let snap = self.snapshot(Some(epoch), cls_sum / denom, kd_sum / denom, skipped)?;
        self.history.push(snap);
        self.next_epoch += 1;
        Ok(self.history.last().unwrap())
    }

    /// One optimizer step on a batch. Unsupervised batches with distillation
    /// off contribute nothing and are skipped.
    pub(crate) fn train_batch(
        &mut self,
        epoch: usize,
        index: usize,
        batch: &Batch,
        masks: &BatchMasks,
        kd_on: bool,
    ) -> Result<BatchStats> {
        let n = self.model.num_experts();
        let rows = batch.samples.len();
        let mut stats = BatchStats::default();
        let scope = if kd_on { batch.kd } else { KdScope::Off };
        if !batch.supervised && scope == KdScope::Off {
            stats.skipped = rows;
            return Ok(stats);
        }
        let records: Vec<&SampleRecord> = batch.samples.iter().map(|r| self.record(r)).collect();
        let features: Vec<&[f32]> = records.iter().map(|r| r.features.as_slice()).collect();
        let fwd = self.model.forward(self.model.batch_segments(&features)?, Some(masks))?;

        let scale = 1.0 / rows as f64;
        let classes = self.model.num_classes();
        let mut grad_s: Vec<Option<Tensor2>> = vec![None; n];
        let mut grad_t: Vec<Option<Tensor2>> = vec![None; n];
        for (r, rec) in records.iter().enumerate() {
            let s_rows: Vec<&[f64]> = fwd.student_logits.iter().map(|z| z.row(r)).collect();
            let t_rows: Vec<&[f64]> = fwd.teacher_logits.iter().map(|z| z.row(r)).collect();
            let label = if batch.supervised { rec.label } else { None };
            let out = combined_loss(batch.home, label, &s_rows, &t_rows, &self.config.loss, scope)?;
            if out.skipped {
                stats.skipped += 1;
                continue;
            }
            let kd: f64 = self.config.loss.gamma * out.kd.iter().sum::<f64>();
            stats.kd += kd;
            stats.cls += out.value - kd;
            stats.seen += 1;
            for (slots, grads) in [(&mut grad_s, &out.student_grads), (&mut grad_t, &out.teacher_grads)] {
                for (j, g) in grads.iter().enumerate() {
                    if let Some(g) = g {
                        let acc = slots[j].get_or_insert_with(|| Tensor2::zeros(rows, classes[j]));
                        for (a, v) in acc.row_mut(r).iter_mut().zip(g) {
                            *a += scale * v;
                        }
                    }
                }
            }
        }
        if !(stats.cls + stats.kd).is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: index,
                dataset: batch.home,
            });
        }
        self.model.backward(&fwd, &grad_s, &grad_t)?;
        self.optimizer.step_all(&mut self.model)?;
        Ok(stats)
    }

    /// Student and teacher logits of `dataset`'s model on a list of records.
    pub fn predict(&self, dataset: usize, records: &[SampleRecord]) -> Result<(Tensor2, Tensor2)> {
        predict(&self.model, dataset, records)
    }

    fn snapshot(&self, epoch: Option<usize>, loss_cls: f64, loss_kd: f64, skipped: usize) -> Result<MetricsSnapshot> {
        let jobs: Vec<(usize, Split)> = (0..self.model.num_experts())
            .flat_map(|d| EVAL_SPLITS.map(|s| (d, s)))
            .filter(|&(d, s)| self.store.count(d, s) > 0)
            .collect();
        let evaluated: Vec<[MetricRow; 2]> = jobs
            .par_iter()
            .map(|&(dataset, split)| evaluate_model(&self.model, self.store, dataset, split))
            .collect::<Result<_>>()?;
        let mut rows = self.expert_rows.clone();
        rows.extend(evaluated.into_iter().flatten());
        rows.sort_by_key(|r| (r.model, r.dataset, r.split));
        Ok(MetricsSnapshot {
            epoch,
            config_hash: self.hash.clone(),
            rows,
            loss_cls,
            loss_kd,
            skipped_unlabeled: skipped,
        })
    }

    pub fn finish(self) -> Result<FitOutcome> {
        let names: Vec<String> = self.store.experts().iter().map(|s| s.name.clone()).collect();
        let (report, curves) = assemble_report(&self.initial, &self.history, &names)?;
        Ok(FitOutcome {
            config: self.config,
            model: self.model,
            experts: self.experts,
            initial: self.initial,
            history: self.history,
            report,
            curves,
        })
    }
}

/// Student and teacher metrics of model `dataset` on one labeled split.
pub fn evaluate_model(model: &JediModel, store: &EmbeddingStore, dataset: usize, split: Split) -> Result<[MetricRow; 2]> {
    let records = store.records(dataset, split);
    let labels = records
        .iter()
        .map(|r| r.label.ok_or_else(|| Error::Config(format!("{split} split of dataset {dataset} is unlabeled"))))
        .collect::<Result<Vec<usize>>>()?;
    let (s, t) = predict(model, dataset, records)?;
    let rows = |z: &Tensor2| (0..z.rows()).map(|r| z.row(r).to_vec()).collect::<Vec<_>>();
    let row = |model, values| MetricRow {
        model,
        dataset,
        split,
        values,
    };
    Ok([
        row(ModelKind::Student, evaluate(&rows(&s), &labels)?),
        row(ModelKind::Teacher, evaluate(&rows(&t), &labels)?),
    ])
}

/// Evaluation-mode student and teacher logits of model `dataset`.
fn predict(model: &JediModel, dataset: usize, records: &[SampleRecord]) -> Result<(Tensor2, Tensor2)> {
    let c = model.num_classes()[dataset];
    let mut s = Vec::with_capacity(records.len() * c);
    let mut t = Vec::with_capacity(records.len() * c);
    for chunk in records.chunks(EVAL_CHUNK) {
        let features: Vec<&[f32]> = chunk.iter().map(|r| r.features.as_slice()).collect();
        let fwd = model.forward(model.batch_segments(&features)?, None)?;
        s.extend_from_slice(fwd.student_logits[dataset].as_slice());
        t.extend_from_slice(fwd.teacher_logits[dataset].as_slice());
    }
    Ok((
        Tensor2::from_vec(records.len(), c, s)?,
        Tensor2::from_vec(records.len(), c, t)?,
    ))
}

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// The configuration as run, with dataset sizes filled in.
    pub config: TrainConfig,
    pub model: JediModel,
    pub experts: ExpertOracle,
    pub initial: MetricsSnapshot,
    pub history: Vec<MetricsSnapshot>,
    pub report: MetricsReport,
    pub curves: Vec<CurvePoint>,
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Where periodic checkpoints go (`checkpoint-EEEEE.jedk`).
    pub checkpoint_dir: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
    /// Stop after this many completed epochs even if the config asks for more.
    pub stop_after: Option<usize>,
}

/// Trains from scratch; experts are pretrained when not supplied.
pub fn fit(store: &EmbeddingStore, config: &TrainConfig, experts: Option<&ExpertOracle>) -> Result<FitOutcome> {
    fit_with(store, config, experts, FitOptions::default())
}

pub fn fit_with(
    store: &EmbeddingStore,
    config: &TrainConfig,
    experts: Option<&ExpertOracle>,
    options: FitOptions,
) -> Result<FitOutcome> {
    config.validate()?;
    let experts = match experts {
        Some(e) => e.clone(),
        None => pretrain_experts(store, &LbfgsSettings::default())?,
    };
    let mut trainer = match &options.resume {
        Some(ck) => Trainer::resume(store, config, experts, ck)?,
        None => Trainer::new(store, config, experts)?,
    };
    let stop = options.stop_after.unwrap_or(usize::MAX).min(trainer.config.epochs);
    while trainer.epoch() < stop {
        trainer.run_epoch()?;
        let every = trainer.config.checkpoint_every;
        if let Some(dir) = &options.checkpoint_dir {
            if every > 0 && (trainer.epoch() % every == 0 || trainer.epoch() == trainer.config.epochs) {
                let path = dir.join(format!("checkpoint-{:05}.jedk", trainer.epoch()));
                trainer.checkpoint().write(&path)?;
            }
        }
    }
    trainer.finish()
}

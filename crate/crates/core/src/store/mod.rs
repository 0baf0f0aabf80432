//! On-disk cache of per-sample expert embeddings.
//!
//! A store is a directory holding `manifest.toml` plus one binary file per
//! non-empty (dataset, split). Each sample carries the concatenation of every
//! expert's feature segment (width `d = Σ feature_dim`), optionally the
//! experts' prediction logits, and a label unless it is unlabeled.
//!
//! Datasets with `num_classes > 0` are experts and come first in the
//! manifest; pool-only entries (`num_classes = 0`, `feature_dim = 0`) follow
//! and may only hold unlabeled samples.

mod binary;
mod dump;
mod manifest;

use std::fmt;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StoreError};
use crate::rng::{SeedStreams, Stream};

pub use binary::{decode_split_file, encode_split_file, FORMAT_VERSION, MAGIC};
pub use dump::{ingest_dump, parse_manifest};
pub use manifest::MANIFEST_FILE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train = 0,
    Val = 1,
    Test = 2,
    Unlabeled = 3,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::Unlabeled];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split `{s}` (expected train, val, test or unlabeled)")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub id: usize,
    pub name: String,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub train_size: usize,
}

impl DatasetSpec {
    pub fn is_pool(&self) -> bool {
        self.num_classes == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    /// Concatenated expert segments, width `d`.
    pub features: Vec<f32>,
    /// One logit block per expert, when cached.
    pub expert_logits: Option<Vec<Vec<f32>>>,
    pub label: Option<usize>,
    pub home: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    manifest: Vec<DatasetSpec>,
    offsets: Vec<usize>,
    num_experts: usize,
    records: Vec<[Vec<SampleRecord>; 4]>,
}

fn validate_manifest(manifest: &[DatasetSpec]) -> Result<usize, String> {
    let mut num_experts = 0;
    let mut seen_pool = false;
    for (i, spec) in manifest.iter().enumerate() {
        if spec.id != i {
            return Err(format!("dataset ids must be 0..n in order; entry {i} has id {}", spec.id));
        }
        if spec.is_pool() {
            if spec.feature_dim != 0 {
                return Err(format!("pool entry `{}` must have feature_dim 0", spec.name));
            }
            seen_pool = true;
        } else {
            if seen_pool {
                return Err(format!("expert `{}` listed after a pool entry", spec.name));
            }
            if spec.num_classes < 2 {
                return Err(format!("dataset `{}` needs num_classes >= 2", spec.name));
            }
            if spec.feature_dim == 0 {
                return Err(format!("dataset `{}` needs feature_dim >= 1", spec.name));
            }
            num_experts += 1;
        }
    }
    Ok(num_experts)
}

impl EmbeddingStore {
    pub fn new(manifest: Vec<DatasetSpec>) -> Result<Self> {
        let num_experts = validate_manifest(&manifest).map_err(StoreError::Invalid)?;
        let mut offsets = vec![0];
        for spec in &manifest[..num_experts] {
            offsets.push(offsets.last().unwrap() + spec.feature_dim);
        }
        let records = manifest.iter().map(|_| Default::default()).collect();
        Ok(Self {
            manifest,
            offsets,
            num_experts,
            records,
        })
    }

    pub fn manifest(&self) -> &[DatasetSpec] {
        &self.manifest
    }

    /// The expert datasets (those with a feature segment and classes).
    pub fn experts(&self) -> &[DatasetSpec] {
        &self.manifest[..self.num_experts]
    }

    pub fn num_experts(&self) -> usize {
        self.num_experts
    }

    /// Prefix sums of segment widths; `offsets[n] == d`.
    pub fn segment_offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn total_dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn segment_dims(&self) -> Vec<usize> {
        self.experts().iter().map(|s| s.feature_dim).collect()
    }

    pub fn num_classes(&self) -> Vec<usize> {
        self.experts().iter().map(|s| s.num_classes).collect()
    }

    pub fn records(&self, dataset: usize, split: Split) -> &[SampleRecord] {
        &self.records[dataset][split as usize]
    }

    pub fn len(&self) -> usize {
        self.records.iter().flatten().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, dataset: usize, split: Split) -> usize {
        self.records(dataset, split).len()
    }

    pub(crate) fn check_record(&self, record: &SampleRecord) -> Result<(), String> {
        let Some(home) = self.manifest.get(record.home) else {
            return Err(format!("home dataset {} not in manifest", record.home));
        };
        if record.features.len() != self.total_dim() {
            return Err(format!(
                "feature width {} does not match manifest width {}",
                record.features.len(),
                self.total_dim()
            ));
        }
        if record.features.iter().any(|x| !x.is_finite()) {
            return Err("non-finite feature value".into());
        }
        if let Some(blocks) = &record.expert_logits {
            if blocks.len() != self.num_experts {
                return Err(format!("{} logit blocks for {} experts", blocks.len(), self.num_experts));
            }
            for (j, (block, spec)) in blocks.iter().zip(self.experts()).enumerate() {
                if block.len() != spec.num_classes {
                    return Err(format!("logit block {j} width {} expected {}", block.len(), spec.num_classes));
                }
            }
        }
        match (record.label, record.split) {
            (Some(_), Split::Unlabeled) => return Err("unlabeled record carries a label".into()),
            (None, split) if split != Split::Unlabeled => return Err(format!("{split} record has no label")),
            (Some(label), _) if label >= home.num_classes => {
                return Err(format!("label {label} out of range for `{}` ({} classes)", home.name, home.num_classes))
            }
            _ => {}
        }
        if record.sample_id.len() > u16::MAX as usize {
            return Err("sample id longer than 65535 bytes".into());
        }
        Ok(())
    }

    /// Appends a record after checking it against the manifest.
    pub fn push(&mut self, record: SampleRecord) -> Result<()> {
        self.check_record(&record)
            .map_err(|m| StoreError::Invalid(format!("sample `{}`: {m}", record.sample_id)))?;
        self.records[record.home][record.split as usize].push(record);
        Ok(())
    }

    /// Sets every manifest `train_size` to the number of train records held.
    pub fn sync_train_sizes(&mut self) {
        for (spec, splits) in self.manifest.iter_mut().zip(&self.records) {
            spec.train_size = splits[Split::Train as usize].len();
        }
    }

    /// The `dataset_id`-th expert's segment of `record`.
    pub fn segment_view<'r>(&self, record: &'r SampleRecord, dataset_id: usize) -> Result<&'r [f32]> {
        if dataset_id >= self.num_experts {
            return Err(Error::Config(format!(
                "segment {dataset_id} out of range ({} experts)",
                self.num_experts
            )));
        }
        Ok(&record.features[self.offsets[dataset_id]..self.offsets[dataset_id + 1]])
    }

    /// Re-marks `⌈fraction·|train|⌉` uniformly chosen train records of every
    /// expert dataset as validation records.
    pub fn split_train_val(&self, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Config(format!("validation fraction {fraction} not in (0, 1)")));
        }
        let streams = SeedStreams::new(seed);
        let mut out = self.clone();
        for id in 0..self.num_experts {
            let train = std::mem::take(&mut out.records[id][Split::Train as usize]);
            if train.is_empty() {
                return Err(Error::Config(format!(
                    "dataset `{}` has no train records to split",
                    self.manifest[id].name
                )));
            }
            // ceil with slack for products like 0.15·100 landing just above an integer
            let k = ((fraction * train.len() as f64) - 1e-9).ceil() as usize;
            let mut rng = streams.rng(Stream::Split, id as u64);
            let mut chosen = vec![false; train.len()];
            for i in sample_indices(&mut rng, train.len(), k.min(train.len())) {
                chosen[i] = true;
            }
            for (mut record, to_val) in train.into_iter().zip(chosen) {
                if to_val {
                    record.split = Split::Val;
                    out.records[id][Split::Val as usize].push(record);
                } else {
                    out.records[id][Split::Train as usize].push(record);
                }
            }
        }
        out.sync_train_sizes();
        Ok(out)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        manifest::write_store(self, dir)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        manifest::read_store(dir)
    }
}

/// Writes `store` as `dir/manifest.toml` plus one binary file per non-empty split.
pub fn write_store(store: &EmbeddingStore, dir: &Path) -> Result<()> {
    store.write(dir)
}

pub fn read_store(dir: &Path) -> Result<EmbeddingStore> {
    EmbeddingStore::read(dir)
}

/// Manifest entries for the four-encoder video configuration: segment widths
/// 2048/2048/1024/2048 and the per-dataset training sizes.
pub fn video_manifest() -> Vec<DatasetSpec> {
    [
        ("activitynet", 200, 2048, 8398),
        ("hmdb51", 51, 2048, 3570),
        ("kinetics400", 400, 1024, 226_070),
        ("ucf101", 101, 2048, 9537),
    ]
    .into_iter()
    .enumerate()
    .map(|(id, (name, num_classes, feature_dim, train_size))| DatasetSpec {
        id,
        name: name.to_string(),
        num_classes,
        feature_dim,
        train_size,
    })
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_manifest() -> Vec<DatasetSpec> {
        vec![
            DatasetSpec { id: 0, name: "a".into(), num_classes: 3, feature_dim: 2, train_size: 0 },
            DatasetSpec { id: 1, name: "b".into(), num_classes: 2, feature_dim: 3, train_size: 0 },
        ]
    }

    fn record(id: usize, home: usize, split: Split) -> SampleRecord {
        SampleRecord {
            sample_id: format!("s{id}"),
            features: (0..5).map(|k| (id * 10 + k) as f32).collect(),
            expert_logits: None,
            label: (split != Split::Unlabeled).then_some(id % 2),
            home,
            split,
        }
    }

    #[test]
    fn video_manifest_width() {
        let store = EmbeddingStore::new(video_manifest()).unwrap();
        assert_eq!(store.total_dim(), 7168);
        assert_eq!(store.segment_offsets(), &[0, 2048, 4096, 5120, 7168]);
        assert_eq!(store.num_classes().iter().sum::<usize>(), 752);
    }

    #[test]
    fn segment_views_partition_the_features() {
        let mut store = EmbeddingStore::new(toy_manifest()).unwrap();
        store.push(record(1, 0, Split::Train)).unwrap();
        let r = &store.records(0, Split::Train)[0];
        assert_eq!(store.segment_view(r, 0).unwrap(), &[10.0, 11.0]);
        assert_eq!(store.segment_view(r, 1).unwrap(), &[12.0, 13.0, 14.0]);
        let joined: Vec<f32> = (0..2).flat_map(|i| store.segment_view(r, i).unwrap().to_vec()).collect();
        assert_eq!(joined, r.features);
        assert!(store.segment_view(r, 2).is_err());
    }

    #[test]
    fn video_segment_for_third_expert() {
        let store = EmbeddingStore::new(video_manifest()).unwrap();
        let rec = SampleRecord {
            sample_id: "v".into(),
            features: (0..7168).map(|i| i as f32).collect(),
            expert_logits: None,
            label: Some(0),
            home: 0,
            split: Split::Train,
        };
        let seg = store.segment_view(&rec, 2).unwrap();
        assert_eq!(seg.len(), 1024);
        assert_eq!(seg[0], 4096.0);
        assert_eq!(*seg.last().unwrap(), 5119.0);
    }

    #[test]
    fn push_rejects_bad_records() {
        let mut store = EmbeddingStore::new(toy_manifest()).unwrap();
        let mut r = record(0, 0, Split::Train);
        r.features.pop();
        assert!(store.push(r).is_err());
        let mut r = record(0, 1, Split::Unlabeled);
        r.label = Some(0);
        assert!(store.push(r).is_err());
        let mut r = record(0, 1, Split::Test);
        r.label = Some(2);
        assert!(store.push(r).is_err());
        let mut r = record(0, 0, Split::Train);
        r.expert_logits = Some(vec![vec![0.0; 3], vec![0.0; 3]]);
        assert!(store.push(r).is_err());
    }

    #[test]
    fn manifest_rules() {
        let mut m = toy_manifest();
        m[1].id = 5;
        assert!(EmbeddingStore::new(m).is_err());
        let mut m = toy_manifest();
        m[0].num_classes = 1;
        assert!(EmbeddingStore::new(m).is_err());
        let mut m = toy_manifest();
        m.insert(0, DatasetSpec { id: 0, name: "pool".into(), num_classes: 0, feature_dim: 0, train_size: 0 });
        for (i, s) in m.iter_mut().enumerate() {
            s.id = i;
        }
        assert!(EmbeddingStore::new(m).is_err(), "pool before experts");
        let mut m = toy_manifest();
        m.push(DatasetSpec { id: 2, name: "pool".into(), num_classes: 0, feature_dim: 0, train_size: 0 });
        let store = EmbeddingStore::new(m).unwrap();
        assert_eq!(store.num_experts(), 2);
        assert_eq!(store.total_dim(), 5);
    }

    fn store_with_train(n: usize) -> EmbeddingStore {
        let mut store = EmbeddingStore::new(toy_manifest()).unwrap();
        for i in 0..n {
            store.push(record(i, 0, Split::Train)).unwrap();
            store.push(record(i, 1, Split::Train)).unwrap();
        }
        store
    }

    #[test]
    fn split_fifteen_percent() {
        let split = store_with_train(100).split_train_val(0.15, 3).unwrap();
        for id in 0..2 {
            assert_eq!(split.count(id, Split::Val), 15);
            assert_eq!(split.count(id, Split::Train), 85);
            assert_eq!(split.manifest()[id].train_size, 85);
        }
        assert_eq!(split, store_with_train(100).split_train_val(0.15, 3).unwrap());
        assert_ne!(split, store_with_train(100).split_train_val(0.15, 4).unwrap());
    }

    #[test]
    fn split_single_record_goes_to_val() {
        let split = store_with_train(1).split_train_val(0.15, 0).unwrap();
        assert_eq!(split.count(0, Split::Val), 1);
        assert_eq!(split.count(0, Split::Train), 0);
    }

    #[test]
    fn split_preserves_payloads_and_homes() {
        let store = store_with_train(20);
        let split = store.split_train_val(0.3, 9).unwrap();
        for id in 0..2 {
            let mut before: Vec<_> = store.records(id, Split::Train).iter().map(|r| (r.sample_id.clone(), r.features.clone(), r.label)).collect();
            let mut after: Vec<_> = [Split::Train, Split::Val]
                .iter()
                .flat_map(|&s| split.records(id, s).iter())
                .inspect(|r| assert_eq!(r.home, id))
                .map(|r| (r.sample_id.clone(), r.features.clone(), r.label))
                .collect();
            before.sort_by(|a, b| a.0.cmp(&b.0));
            after.sort_by(|a, b| a.0.cmp(&b.0));
            assert_eq!(before, after);
        }
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let store = store_with_train(10);
        assert!(matches!(store.split_train_val(0.0, 0), Err(Error::Config(_))));
        assert!(matches!(store.split_train_val(1.0, 0), Err(Error::Config(_))));
    }
}

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::binary::{decode_split_file, encode_split_file, FORMAT_VERSION};
use super::{DatasetSpec, EmbeddingStore, Split};
use crate::error::{Result, StoreError};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestDoc {
    format_version: u16,
    total_dim: usize,
    #[serde(default, rename = "dataset")]
    datasets: Vec<DatasetSpec>,
    #[serde(default, rename = "file")]
    files: Vec<FileEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileEntry {
    dataset: usize,
    split: Split,
    path: String,
    records: u64,
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(super) fn write_store(store: &EmbeddingStore, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut files = Vec::new();
    for spec in store.manifest() {
        for split in Split::ALL {
            let records = store.records(spec.id, split);
            if records.is_empty() {
                continue;
            }
            let name = format!("d{}_{}.jedi", spec.id, split);
            let path = dir.join(&name);
            let bytes = encode_split_file(spec.id as u16, split, records);
            fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
            files.push(FileEntry {
                dataset: spec.id,
                split,
                path: name,
                records: records.len() as u64,
            });
        }
    }
    let doc = ManifestDoc {
        format_version: FORMAT_VERSION,
        total_dim: store.total_dim(),
        datasets: store.manifest().to_vec(),
        files,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = toml::to_string(&doc).map_err(|e| StoreError::Manifest {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(())
}

pub(super) fn read_store(dir: &Path) -> Result<EmbeddingStore> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let manifest_err = |msg: String| StoreError::Manifest { path: path.clone(), msg };
    let doc: ManifestDoc = toml::from_str(&text).map_err(|e| manifest_err(e.to_string()))?;
    if doc.format_version != FORMAT_VERSION {
        return Err(StoreError::Version {
            path: path.clone(),
            found: doc.format_version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    let mut store = EmbeddingStore::new(doc.datasets).map_err(|e| manifest_err(e.to_string()))?;
    if store.total_dim() != doc.total_dim {
        return Err(manifest_err(format!(
            "total_dim {} but segment widths sum to {}",
            doc.total_dim,
            store.total_dim()
        ))
        .into());
    }
    let widths = store.num_classes();
    let mut seen = std::collections::HashSet::new();
    for entry in &doc.files {
        if entry.dataset >= store.manifest().len() || !seen.insert((entry.dataset, entry.split)) {
            return Err(manifest_err(format!("bad or duplicate file entry `{}`", entry.path)).into());
        }
        let file = dir.join(&entry.path);
        let bytes = fs::read(&file).map_err(|e| io_err(&file, e))?;
        let (id, split, records) = decode_split_file(&bytes, &file, store.total_dim(), &widths)?;
        if id as usize != entry.dataset || split != entry.split {
            return Err(StoreError::Record {
                path: file,
                record: 0,
                msg: format!("header says dataset {id}/{split}, manifest says {}/{}", entry.dataset, entry.split),
            }
            .into());
        }
        if records.len() as u64 != entry.records {
            return Err(manifest_err(format!(
                "`{}` holds {} records, manifest says {}",
                entry.path,
                records.len(),
                entry.records
            ))
            .into());
        }
        for (index, record) in records.into_iter().enumerate() {
            store.check_record(&record).map_err(|msg| StoreError::Record {
                path: file.clone(),
                record: index,
                msg,
            })?;
            store.records[record.home][record.split as usize].push(record);
        }
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{video_manifest, SampleRecord};

    #[test]
    fn empty_store_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let store = EmbeddingStore::new(video_manifest()).unwrap();
        store.write(dir.path()).unwrap();
        let back = EmbeddingStore::read(dir.path()).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.total_dim(), 7168);
    }

    #[test]
    fn short_record_is_width_error_at_index() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = EmbeddingStore::new(video_manifest()).unwrap();
        for i in 0..3 {
            store
                .push(SampleRecord {
                    sample_id: format!("v{i}"),
                    features: vec![0.5; 7168],
                    expert_logits: None,
                    label: Some(i),
                    home: 1,
                    split: Split::Train,
                })
                .unwrap();
        }
        store.write(dir.path()).unwrap();
        // rewrite the file with the last record one float short
        let mut records = store.records(1, Split::Train).to_vec();
        records[2].features.pop();
        let file = dir.path().join("d1_train.jedi");
        fs::write(&file, encode_split_file(1, Split::Train, &records)).unwrap();
        match EmbeddingStore::read(dir.path()) {
            Err(crate::Error::Store(StoreError::Width { record: 2, expected: 7168, found: 7167, path, .. })) => {
                assert_eq!(path, file)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn corrupted_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = EmbeddingStore::new(video_manifest()).unwrap();
        store
            .push(SampleRecord {
                sample_id: "x".into(),
                features: vec![0.0; 7168],
                expert_logits: None,
                label: None,
                home: 2,
                split: Split::Unlabeled,
            })
            .unwrap();
        store.write(dir.path()).unwrap();
        let file = dir.path().join("d2_unlabeled.jedi");
        let mut bytes = fs::read(&file).unwrap();
        bytes[1] = b'!';
        fs::write(&file, bytes).unwrap();
        assert!(matches!(
            EmbeddingStore::read(dir.path()),
            Err(crate::Error::Store(StoreError::BadMagic { .. }))
        ));
    }
}

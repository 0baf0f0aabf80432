//! The plain-text interchange format: one sample per line,
//! `id,label,x1,...,xd` with label `-1` for unlabeled samples and `d` the
//! store's total feature width. Blank lines and `#` comments are skipped.

use std::path::Path;

use serde::Deserialize;

use super::{DatasetSpec, EmbeddingStore, SampleRecord, Split};
use crate::error::{Result, StoreError};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestInput {
    #[serde(rename = "dataset")]
    datasets: Vec<DatasetSpec>,
}

/// Reads a list of `[[dataset]]` tables.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<DatasetSpec>> {
    let doc: ManifestInput = toml::from_str(text).map_err(|e| StoreError::Manifest {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok(doc.datasets)
}

/// Appends every sample of a dump to `store` under `home`/`split` and
/// returns how many were read.
pub fn ingest_dump(store: &mut EmbeddingStore, text: &str, home: usize, split: Split, path: &Path) -> Result<usize> {
    let width = store.total_dim();
    let mut added = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| StoreError::Line {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let mut fields = line.split(',').map(str::trim);
        let id = fields.next().filter(|s| !s.is_empty()).ok_or_else(|| err("missing sample id".into()))?;
        let label = fields.next().ok_or_else(|| err("missing label".into()))?;
        let label = match label.parse::<i64>() {
            Ok(-1) => None,
            Ok(v) if v >= 0 => Some(v as usize),
            _ => return Err(err(format!("bad label `{label}` (expected a class index or -1)")).into()),
        };
        let features = fields
            .enumerate()
            .map(|(k, f)| f.parse::<f32>().map_err(|_| err(format!("bad value `{f}` in column {}", k + 3))))
            .collect::<Result<Vec<f32>, _>>()?;
        if features.len() != width {
            return Err(err(format!("{} feature values, manifest width is {width}", features.len())).into());
        }
        let record = SampleRecord {
            sample_id: id.to_string(),
            features,
            expert_logits: None,
            label,
            home,
            split,
        };
        store.check_record(&record).map_err(err)?;
        store.push(record)?;
        added += 1;
    }
    Ok(added)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> EmbeddingStore {
        let spec = |id, name: &str, num_classes, feature_dim| DatasetSpec {
            id,
            name: name.into(),
            num_classes,
            feature_dim,
            train_size: 0,
        };
        EmbeddingStore::new(vec![spec(0, "a", 3, 2), spec(1, "b", 2, 1), spec(2, "pool", 0, 0)]).unwrap()
    }

    #[test]
    fn reads_labeled_and_unlabeled_lines() {
        let mut s = store();
        let p = Path::new("dump.txt");
        let n = ingest_dump(&mut s, "# header\nx0,2,0.5,-1,3\n\nx1,0,1e-3,2,0\n", 0, Split::Train, p).unwrap();
        assert_eq!(n, 2);
        assert_eq!(s.records(0, Split::Train)[0].features, vec![0.5, -1.0, 3.0]);
        assert_eq!(s.records(0, Split::Train)[1].label, Some(0));
        ingest_dump(&mut s, "u0,-1,1,2,3\n", 2, Split::Unlabeled, p).unwrap();
        assert_eq!(s.records(2, Split::Unlabeled)[0].label, None);
    }

    #[test]
    fn empty_dump_adds_nothing() {
        let mut s = store();
        assert_eq!(ingest_dump(&mut s, "", 0, Split::Test, Path::new("e")).unwrap(), 0);
        assert!(s.is_empty());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let p = Path::new("dump.txt");
        for (text, needle) in [
            ("a,0,1,2,3\nb,1,1,2\n", "line 2"),
            ("a,0,1,2,3\n\nb,1,1,x,3\n", "line 3"),
            ("a,9,1,2,3\n", "line 1"),
            ("a,-1,1,2,3\n", "no label"),
            ("a,q,1,2,3\n", "bad label"),
        ] {
            let mut s = store();
            let msg = ingest_dump(&mut s, text, 0, Split::Train, p).unwrap_err().to_string();
            assert!(msg.contains(needle), "{text:?}: {msg}");
            assert!(msg.contains("dump.txt"), "{msg}");
        }
    }

    #[test]
    fn manifest_tables_parse() {
        let text = "[[dataset]]\nid = 0\nname = \"a\"\nnum_classes = 3\nfeature_dim = 2\ntrain_size = 0\n";
        let m = parse_manifest(text, Path::new("m.toml")).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].feature_dim, 2);
        assert!(parse_manifest("[[dataset]]\nid = 0\n", Path::new("m.toml")).is_err());
    }
}

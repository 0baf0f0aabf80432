//! Little-endian split-file layout:
//!
//! ```text
//! magic "JEDI" | version u16 | dataset_id u16 | split u8 | count u64
//! per record:
//!   id_len u16 | id bytes (UTF-8) | label i32 (-1 = none) | d u32 | d × f32
//!   has_logits u8 | if 1: per expert { width u32 | width × f32 }
//! ```

use std::path::Path;

use super::{SampleRecord, Split};
use crate::error::StoreError;

pub const MAGIC: [u8; 4] = *b"JEDI";
pub const FORMAT_VERSION: u16 = 1;

pub fn encode_split_file(dataset_id: u16, split: Split, records: &[SampleRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&dataset_id.to_le_bytes());
    buf.push(split.tag());
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        buf.extend_from_slice(&(r.sample_id.len() as u16).to_le_bytes());
        buf.extend_from_slice(r.sample_id.as_bytes());
        let label = r.label.map_or(-1, |l| l as i32);
        buf.extend_from_slice(&label.to_le_bytes());
        buf.extend_from_slice(&(r.features.len() as u32).to_le_bytes());
        for x in &r.features {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        match &r.expert_logits {
            None => buf.push(0),
            Some(blocks) => {
                buf.push(1);
                for block in blocks {
                    buf.extend_from_slice(&(block.len() as u32).to_le_bytes());
                    for x in block {
                        buf.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
    record: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        if self.bytes.len() - self.pos < n {
            return Err(StoreError::Truncated {
                path: self.path.to_path_buf(),
                record: self.record,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], StoreError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8, StoreError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, StoreError> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        self.array().map(u32::from_le_bytes)
    }

    fn i32(&mut self) -> Result<i32, StoreError> {
        self.array().map(i32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        self.array().map(u64::from_le_bytes)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, StoreError> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.truncated())?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn truncated(&self) -> StoreError {
        StoreError::Truncated {
            path: self.path.to_path_buf(),
            record: self.record,
        }
    }
}

/// Decodes one split file. `dim` is the manifest's total feature width and
/// `logit_widths` the class count of every expert, in order.
pub fn decode_split_file(
    bytes: &[u8],
    path: &Path,
    dim: usize,
    logit_widths: &[usize],
) -> Result<(u16, Split, Vec<SampleRecord>), StoreError> {
    let mut cur = Cursor {
        bytes,
        pos: 0,
        path,
        record: 0,
    };
    let magic: [u8; 4] = match cur.array() {
        Ok(m) => m,
        Err(_) => {
            let mut found = [0u8; 4];
            found[..bytes.len().min(4)].copy_from_slice(&bytes[..bytes.len().min(4)]);
            return Err(StoreError::BadMagic { path: path.to_path_buf(), found });
        }
    };
    if magic != MAGIC {
        return Err(StoreError::BadMagic { path: path.to_path_buf(), found: magic });
    }
    let version = cur.u16()?;
    if version != FORMAT_VERSION {
        return Err(StoreError::Version {
            path: path.to_path_buf(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let dataset_id = cur.u16()?;
    let tag = cur.u8()?;
    let split = Split::from_tag(tag).ok_or_else(|| StoreError::Record {
        path: path.to_path_buf(),
        record: 0,
        msg: format!("unknown split tag {tag}"),
    })?;
    let count = cur.u64()?;

    let mut records = Vec::new();
    for index in 0..count as usize {
        cur.record = index;
        let id_len = cur.u16()? as usize;
        let sample_id = String::from_utf8(cur.take(id_len)?.to_vec()).map_err(|_| StoreError::Record {
            path: path.to_path_buf(),
            record: index,
            msg: "sample id is not UTF-8".into(),
        })?;
        let label = match cur.i32()? {
            -1 => None,
            l if l >= 0 => Some(l as usize),
            l => {
                return Err(StoreError::Record {
                    path: path.to_path_buf(),
                    record: index,
                    msg: format!("negative label {l}"),
                })
            }
        };
        let width = cur.u32()? as usize;
        if width != dim {
            return Err(StoreError::Width {
                path: path.to_path_buf(),
                record: index,
                what: "feature",
                expected: dim,
                found: width,
            });
        }
        let features = cur.f32s(width)?;
        let expert_logits = match cur.u8()? {
            0 => None,
            1 => {
                let mut blocks = Vec::with_capacity(logit_widths.len());
                for &expected in logit_widths {
                    let w = cur.u32()? as usize;
                    if w != expected {
                        return Err(StoreError::Width {
                            path: path.to_path_buf(),
                            record: index,
                            what: "logit block",
                            expected,
                            found: w,
                        });
                    }
                    blocks.push(cur.f32s(w)?);
                }
                Some(blocks)
            }
            flag => {
                return Err(StoreError::Record {
                    path: path.to_path_buf(),
                    record: index,
                    msg: format!("invalid logits flag {flag}"),
                })
            }
        };
        records.push(SampleRecord {
            sample_id,
            features,
            expert_logits,
            label,
            home: dataset_id as usize,
            split,
        });
    }
    if cur.pos != bytes.len() {
        return Err(StoreError::Record {
            path: path.to_path_buf(),
            record: count as usize,
            msg: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    Ok((dataset_id, split, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(width: usize) -> SampleRecord {
        SampleRecord {
            sample_id: "clip-7".into(),
            features: (0..width).map(|i| i as f32 * 0.5).collect(),
            expert_logits: Some(vec![vec![1.0, -1.0], vec![0.25, 0.5, 0.75]]),
            label: Some(1),
            home: 3,
            split: Split::Test,
        }
    }

    #[test]
    fn header_layout_is_exact() {
        let bytes = encode_split_file(3, Split::Test, &[rec(2)]);
        assert_eq!(&bytes[..4], b"JEDI");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..8], &[3, 0]);
        assert_eq!(bytes[8], 2);
        assert_eq!(&bytes[9..17], &1u64.to_le_bytes());
        assert_eq!(&bytes[17..19], &6u16.to_le_bytes());
        assert_eq!(&bytes[19..25], b"clip-7");
        assert_eq!(&bytes[25..29], &1i32.to_le_bytes());
        assert_eq!(&bytes[29..33], &2u32.to_le_bytes());
        assert_eq!(&bytes[33..37], &0.0f32.to_le_bytes());
        assert_eq!(&bytes[37..41], &0.5f32.to_le_bytes());
        assert_eq!(bytes[41], 1);
        assert_eq!(&bytes[42..46], &2u32.to_le_bytes());
        assert_eq!(bytes.len(), 46 + 8 + 4 + 12);
    }

    #[test]
    fn decode_inverts_encode() {
        let bytes = encode_split_file(3, Split::Test, &[rec(4), rec(4)]);
        let (id, split, records) = decode_split_file(&bytes, Path::new("x"), 4, &[2, 3]).unwrap();
        assert_eq!((id, split), (3, Split::Test));
        assert_eq!(records, vec![rec(4), rec(4)]);
    }

    #[test]
    fn distinct_errors() {
        let p = Path::new("d0_test.jedi");
        let mut bytes = encode_split_file(0, Split::Test, &[rec(4)]);
        bytes[0] = b'X';
        assert!(matches!(decode_split_file(&bytes, p, 4, &[2, 3]), Err(StoreError::BadMagic { .. })));

        let mut bytes = encode_split_file(0, Split::Test, &[rec(4)]);
        bytes[4] = 9;
        assert!(matches!(decode_split_file(&bytes, p, 4, &[2, 3]), Err(StoreError::Version { found: 9, .. })));

        let bytes = encode_split_file(0, Split::Test, &[rec(4), rec(3)]);
        match decode_split_file(&bytes, p, 4, &[2, 3]) {
            Err(StoreError::Width { record: 1, expected: 4, found: 3, .. }) => {}
            other => panic!("{other:?}"),
        }

        let bytes = encode_split_file(0, Split::Test, &[rec(4), rec(4)]);
        match decode_split_file(&bytes[..bytes.len() - 3], p, 4, &[2, 3]) {
            Err(StoreError::Truncated { record: 1, ref path }) => assert_eq!(path, p),
            other => panic!("{other:?}"),
        }
    }
}

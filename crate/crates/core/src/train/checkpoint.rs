//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `JEDK`, version u16, completed epochs u64,
//! seed u64, config hash (u16 length + bytes), parameter count u32, then per
//! parameter its name, rows u32, cols u32, step count u64 and the value, first
//! and second moment as f64 arrays. The metric history follows as a
//! length-prefixed TOML document.
//!
//! Random streams are keyed by (seed, epoch), so the seed and epoch fully
//! determine the generator state at an epoch boundary.

use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Parameters, Tensor2};
use crate::metrics::MetricsSnapshot;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"JEDK";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamState {
    pub name: String,
    pub value: Tensor2,
    pub adam_m: Tensor2,
    pub adam_v: Tensor2,
    pub step_count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: String,
    pub params: Vec<ParamState>,
    pub history: Vec<MetricsSnapshot>,
}

#[derive(Serialize, Deserialize)]
struct History {
    snapshots: Vec<MetricsSnapshot>,
}

impl Checkpoint {
    pub fn capture<M: Parameters + ?Sized>(
        model: &mut M,
        epoch: usize,
        seed: u64,
        config_hash: &str,
        history: &[MetricsSnapshot],
    ) -> Self {
        let params = model
            .params_mut()
            .into_iter()
            .map(|p| ParamState {
                name: p.name.clone(),
                value: p.value.clone(),
                adam_m: p.adam_m.clone(),
                adam_v: p.adam_v.clone(),
                step_count: p.step_count,
            })
            .collect();
        Self {
            epoch,
            seed,
            config_hash: config_hash.to_string(),
            params,
            history: history.to_vec(),
        }
    }

    /// Copies parameters and optimizer state into `model`, which must have
    /// the same parameter names and shapes in the same order.
    pub fn restore<M: Parameters + ?Sized>(&self, model: &mut M) -> Result<()> {
        let mut params = model.params_mut();
        let fail = |msg: String| Error::Checkpoint {
            path: "<memory>".into(),
            msg,
        };
        if params.len() != self.params.len() {
            return Err(fail(format!(
                "{} parameters in checkpoint, model has {}",
                self.params.len(),
                params.len()
            )));
        }
        for (p, s) in params.iter_mut().zip(&self.params) {
            if p.name != s.name || p.value.shape() != s.value.shape() {
                return Err(fail(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    s.name,
                    s.value.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = s.value.clone();
            p.adam_m = s.adam_m.clone();
            p.adam_v = s.adam_v.clone();
            p.step_count = s.step_count;
            p.zero_grad();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        put_str(&mut out, &self.config_hash);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            put_str(&mut out, &p.name);
            let (r, c) = p.value.shape();
            out.extend_from_slice(&(r as u32).to_le_bytes());
            out.extend_from_slice(&(c as u32).to_le_bytes());
            out.extend_from_slice(&p.step_count.to_le_bytes());
            for t in [&p.value, &p.adam_m, &p.adam_v] {
                for v in t.as_slice() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let history = toml::to_string(&History {
            snapshots: self.history.clone(),
        })
        .expect("history serializes");
        out.extend_from_slice(&(history.len() as u64).to_le_bytes());
        out.extend_from_slice(history.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |msg: String| Error::Checkpoint {
            path: path.to_path_buf(),
            msg,
        };
        let mut cur = Cursor::new(bytes);
        let magic: [u8; 4] = take(&mut cur).map_err(|_| fail("truncated header".into()))?;
        if magic != CHECKPOINT_MAGIC {
            return Err(fail(format!("bad magic bytes {magic:?}")));
        }
        let mut body = || -> std::io::Result<Result<Self>> {
            let version = u16::from_le_bytes(take(&mut cur)?);
            if version != VERSION {
                return Ok(Err(fail(format!("unsupported version {version}"))));
            }
            let epoch = u64::from_le_bytes(take(&mut cur)?) as usize;
            let seed = u64::from_le_bytes(take(&mut cur)?);
            let config_hash = get_str(&mut cur)?;
            let count = u32::from_le_bytes(take(&mut cur)?) as usize;
            let mut params = Vec::with_capacity(count.min(1 << 16));
            for _ in 0..count {
                let name = get_str(&mut cur)?;
                let rows = u32::from_le_bytes(take(&mut cur)?) as usize;
                let cols = u32::from_le_bytes(take(&mut cur)?) as usize;
                let step_count = u64::from_le_bytes(take(&mut cur)?);
                let mut tensor = || -> std::io::Result<Tensor2> {
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows * cols {
                        data.push(f64::from_le_bytes(take(&mut cur)?));
                    }
                    Ok(Tensor2::from_vec(rows, cols, data).expect("sized"))
                };
                let value = tensor()?;
                let adam_m = tensor()?;
                let adam_v = tensor()?;
                params.push(ParamState {
                    name,
                    value,
                    adam_m,
                    adam_v,
                    step_count,
                });
            }
            let len = u64::from_le_bytes(take(&mut cur)?) as usize;
            let mut text = vec![0u8; len];
            cur.read_exact(&mut text)?;
            let history: History = match std::str::from_utf8(&text).ok().and_then(|t| toml::from_str(t).ok()) {
                Some(h) => h,
                None => return Ok(Err(fail("unreadable metric history".into()))),
            };
            if cur.position() as usize != bytes.len() {
                return Ok(Err(fail("trailing bytes".into())));
            }
            Ok(Ok(Checkpoint {
                epoch,
                seed,
                config_hash,
                params,
                history: history.snapshots,
            }))
        };
        body().map_err(|_| fail("truncated checkpoint".into()))?
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn take<const N: usize>(cur: &mut Cursor<&[u8]>) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    cur.read_exact(&mut buf)?;
    Ok(buf)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn get_str(cur: &mut Cursor<&[u8]>) -> std::io::Result<String> {
    let len = u16::from_le_bytes(take(cur)?) as usize;
    let mut buf = vec![0u8; len];
    cur.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::ParamTensor;

    fn sample() -> (Vec<ParamTensor>, Checkpoint) {
        let mut params = vec![
            ParamTensor::new("a", Tensor2::from_rows(&[[1.0, -2.5], [0.1, 3.0]])),
            ParamTensor::new("b", Tensor2::row_vector(&[0.7])),
        ];
        params[0].adam_m.set(1, 1, 1e-300);
        params[1].step_count = 12;
        let ck = Checkpoint::capture(&mut params, 4, 9, "abc", &[]);
        (params, ck)
    }

    #[test]
    fn bytes_round_trip() {
        let (_, ck) = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("x")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(&ck.to_bytes()[..4], b"JEDK");
    }

    #[test]
    fn restore_checks_layout() {
        let (mut params, ck) = sample();
        params[0].value.fill(0.0);
        ck.restore(&mut params).unwrap();
        assert_eq!(params[0].value.get(0, 1), -2.5);
        assert_eq!(params[1].step_count, 12);
        let mut other = vec![ParamTensor::new("a", Tensor2::zeros(1, 1))];
        assert!(ck.restore(&mut other).is_err());
    }

    #[test]
    fn corrupt_input_is_reported() {
        let (_, ck) = sample();
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], Path::new("x")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        let err = Checkpoint::from_bytes(&bad, Path::new("x")).unwrap_err().to_string();
        assert!(err.contains("magic"));
    }
}

//! Binary checkpoint files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! b"WUNT"  u32 version
//! u32 len, config text (UTF-8)
//! u32 epoch  f64 best_total_loss
//! u64 adam_step  f64 lr  f64 beta1  f64 beta2  f64 epsilon
//! u32 tensor_count
//! per tensor: u32 name_len, name, u32 rank, u32 dims[rank], f32 values[]
//! ```
//!
//! Tensors are the model parameters in manifest order, then the Adam first
//! moments (`adam.m.<name>`), then the second moments (`adam.v.<name>`).

use std::fs;
use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{CheckpointError, Error, Result};
use crate::model::{Arch, ModelParams};
use crate::nn::{AdamConfig, AdamState};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"WUNT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// 1-based epoch after which the state was captured.
    pub epoch: u32,
    pub best_total_loss: f64,
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
}

fn expected_names(params: &ModelParams<f32>) -> Vec<String> {
    let names = params.names();
    names
        .iter()
        .cloned()
        .chain(names.iter().map(|n| format!("adam.m.{n}")))
        .chain(names.iter().map(|n| format!("adam.v.{n}")))
        .collect()
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text = ckpt.config.to_text();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&ckpt.epoch.to_le_bytes());
    out.extend_from_slice(&ckpt.best_total_loss.to_le_bytes());
    out.extend_from_slice(&ckpt.adam.step.to_le_bytes());
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = ckpt.adam.config;
    for v in [lr, beta1, beta2, epsilon] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let names = expected_names(&ckpt.params);
    let tensors = ckpt
        .params
        .tensors()
        .iter()
        .chain(&ckpt.adam.first_moment)
        .chain(&ckpt.adam.second_moment);
    out.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for (name, t) in names.iter().zip(tensors) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
        for &d in t.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated(what));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses checkpoint bytes, checking every tensor against `arch`.
pub fn decode(bytes: &[u8], arch: &Arch) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let len = r.u32("config length")? as usize;
    let text = std::str::from_utf8(r.take(len, "config")?)
        .map_err(|e| CheckpointError::Malformed(format!("config is not UTF-8: {e}")))?;
    let config = TrainConfig::parse(text)
        .map_err(|e| CheckpointError::Malformed(format!("config: {e}")))?;
    let epoch = r.u32("epoch")?;
    let best_total_loss = r.f64("best loss")?;
    let step = r.u64("adam step")?;
    let adam_config = AdamConfig {
        lr: r.f64("adam lr")?,
        beta1: r.f64("adam beta1")?,
        beta2: r.f64("adam beta2")?,
        epsilon: r.f64("adam epsilon")?,
    };

    let manifest = arch.manifest();
    let expected: Vec<(String, Vec<usize>)> = {
        let dims = || manifest.iter().map(|s| s.dims.clone());
        let names = manifest.iter().map(|s| s.name.clone());
        names
            .clone()
            .zip(dims())
            .chain(names.clone().map(|n| format!("adam.m.{n}")).zip(dims()))
            .chain(names.map(|n| format!("adam.v.{n}")).zip(dims()))
            .collect()
    };
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(expected.len());
    for index in 0..count {
        let Some((want_name, want_dims)) = expected.get(index) else {
            return Err(CheckpointError::TensorCount {
                expected: expected.len(),
                found: count,
            });
        };
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| CheckpointError::Malformed(format!("tensor #{index} name is not UTF-8")))?;
        if name != want_name {
            return Err(CheckpointError::NameMismatch {
                index,
                expected: want_name.clone(),
                found: name.to_string(),
            });
        }
        let rank = r.u32("tensor rank")? as usize;
        if rank > 8 {
            return Err(CheckpointError::Malformed(format!("tensor `{name}` has rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| r.u32("tensor dims").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        if &dims != want_dims {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: want_dims.clone(),
                found: dims,
            });
        }
        let numel: usize = dims.iter().product();
        let raw = r.take(numel * 4, "tensor values")?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::from_vec(&dims, values)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        tensors.push(t);
    }
    if count < expected.len() {
        return Err(CheckpointError::TensorCount {
            expected: expected.len(),
            found: count,
        });
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }

    let n = manifest.len();
    let second_moment = tensors.split_off(2 * n);
    let first_moment = tensors.split_off(n);
    let params = ModelParams::from_tensors(arch.clone(), tensors)
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    Ok(Checkpoint {
        config,
        epoch,
        best_total_loss,
        params,
        adam: AdamState {
            config: adam_config,
            step,
            first_moment,
            second_moment,
        },
    })
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ckpt);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    load_checkpoint_with(path, &Arch::standard())
}

pub fn load_checkpoint_with(path: &Path, arch: &Arch) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes, arch)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_checkpoint() -> Checkpoint {
        let params = ModelParams::<f32>::init(Arch::tiny(), 3).unwrap();
        let mut adam = AdamState::new(params.tensors(), AdamConfig::default());
        let mut p = params.clone();
        let grads: Vec<_> = params.tensors().iter().map(|t| t.map(|v| v * 0.5 + 0.1)).collect();
        adam.step(p.tensors_mut(), &grads).unwrap();
        Checkpoint {
            config: TrainConfig {
                epochs: 7,
                ..TrainConfig::default()
            },
            epoch: 4,
            best_total_loss: 0.123456789,
            params: p,
            adam,
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let ckpt = tiny_checkpoint();
        let bytes = encode(&ckpt);
        let back = decode(&bytes, &Arch::tiny()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn every_truncation_is_an_error() {
        let bytes = encode(&tiny_checkpoint());
        for cut in (0..bytes.len()).step_by(97).chain([bytes.len() - 1]) {
            match decode(&bytes[..cut], &Arch::tiny()) {
                Err(CheckpointError::Truncated(_)) => {}
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn header_checks() {
        let mut bytes = encode(&tiny_checkpoint());
        bytes[0] = b'X';
        assert_eq!(
            decode(&bytes, &Arch::tiny()).unwrap_err(),
            CheckpointError::BadMagic(*b"XUNT")
        );
        let mut bytes = encode(&tiny_checkpoint());
        bytes[4] = 9;
        assert_eq!(
            decode(&bytes, &Arch::tiny()).unwrap_err(),
            CheckpointError::UnsupportedVersion(9)
        );
        let mut bytes = encode(&tiny_checkpoint());
        bytes.push(0);
        assert_eq!(
            decode(&bytes, &Arch::tiny()).unwrap_err(),
            CheckpointError::TrailingBytes(1)
        );
    }

    #[test]
    fn mismatched_arch_names_the_tensor() {
        let bytes = encode(&tiny_checkpoint());
        let mut other = Arch::tiny();
        other.down[0] += 1;
        match decode(&bytes, &other).unwrap_err() {
            CheckpointError::ShapeMismatch { name, .. } => assert_eq!(name, "down1.conv1.weight"),
            e => panic!("{e:?}"),
        }
        let mut deeper = Arch::tiny();
        deeper.hidden.push(3);
        assert!(decode(&bytes, &deeper).is_err());
    }
}

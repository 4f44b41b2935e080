//! Binary checkpoint format.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        4 bytes  "VSE1"
//! version      u32
//! config       u32 length + UTF-8 `key = value` lines (model, then training)
//! tensor count u32
//! per tensor   u32 name length + UTF-8 name
//!              u8 dtype (0 = f32, 1 = f64)
//!              u32 rank, u64 extent per axis
//!              payload, row-major
//! rng seed     u64
//! step         u64
//! ```
//!
//! Loading checks the table against the parameter inventory the stored
//! configuration implies, so a checkpoint always holds every model tensor
//! exactly once.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use vitse_core::{DType, ModelParams, Tensor, TrainConfig, ViTConfig};

use crate::settings::{model_entries, parse_entries, render, set_model, set_train, train_entries};

pub const MAGIC: [u8; 4] = *b"VSE1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}, expected {VERSION}")]
    BadVersion(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} unexpected bytes after the step counter")]
    TrailingBytes(usize),
    #[error("stored configuration is invalid: {0}")]
    Config(String),
    #[error("unknown dtype code {0}")]
    DType(u8),
    #[error("tensor name is not UTF-8")]
    Name,
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("unexpected tensor `{0}`")]
    UnexpectedTensor(String),
    #[error("tensor `{0}` appears twice")]
    DuplicateTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            StoredTensor::F32(_) => DType::F32,
            StoredTensor::F64(_) => DType::F64,
        }
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        match self {
            StoredTensor::F32(t) => t.clone(),
            StoredTensor::F64(t) => t.cast(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ViTConfig,
    pub train: TrainConfig,
    /// Named tensors in file order.
    pub tensors: Vec<(String, StoredTensor)>,
    pub rng_seed: u64,
    pub step: u64,
}

impl Checkpoint {
    /// Snapshot of f32 parameters. Whether the gate is stored follows
    /// `params.se`, and `train.se_enabled` is set to match.
    pub fn from_params(model: &ViTConfig, train: &TrainConfig, params: &ModelParams<Tensor<f32>>, step: u64) -> Self {
        let mut tensors = Vec::new();
        params.visit(&mut |name, t| tensors.push((name.to_string(), StoredTensor::F32(t.clone()))));
        Checkpoint {
            model: model.clone(),
            train: TrainConfig {
                se_enabled: params.se.is_some(),
                ..train.clone()
            },
            tensors,
            rng_seed: train.rng_seed,
            step,
        }
    }

    /// Rebuilds the parameter tree; f64 tensors are narrowed to f32.
    pub fn params(&self) -> Result<ModelParams<Tensor<f32>>, CheckpointError> {
        let by_name: HashMap<&str, &StoredTensor> = self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ModelParams::<Tensor<f32>>::init(&self.model, self.train.se_enabled, &mut rng)
            .map_err(|e| CheckpointError::Config(e.to_string()))?;
        let mut missing = None;
        params.visit_mut(&mut |name, slot| match by_name.get(name) {
            Some(t) => *slot = t.to_f32(),
            None => {
                missing.get_or_insert_with(|| name.to_string());
            }
        });
        match missing {
            Some(name) => Err(CheckpointError::MissingTensor(name)),
            None => Ok(params),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let text = render(&model_entries(&self.model)) + &render(&train_entries(&self.train));
        put_bytes(&mut out, text.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, tensor) in &self.tensors {
            put_bytes(&mut out, name.as_bytes());
            out.push(tensor.dtype() as u8);
            out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match tensor {
                StoredTensor::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                StoredTensor::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        out.extend_from_slice(&self.rng_seed.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let text = std::str::from_utf8(r.sized()?).map_err(|_| CheckpointError::Config("not UTF-8".into()))?;
        let (model, train) = parse_configs(text)?;

        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = std::str::from_utf8(r.sized()?)
                .map_err(|_| CheckpointError::Name)?
                .to_string();
            let dtype = r.u8()?;
            let dtype = DType::from_code(dtype).ok_or(CheckpointError::DType(dtype))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or(CheckpointError::Truncated(r.pos))?;
            let payload = r.take(len.checked_mul(dtype.size()).ok_or(CheckpointError::Truncated(r.pos))?)?;
            let bad_shape = |_| CheckpointError::Shape {
                name: name.clone(),
                expected: Vec::new(),
                found: shape.clone(),
            };
            let tensor = match dtype {
                DType::F32 => {
                    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                    StoredTensor::F32(Tensor::new(&shape, data).map_err(bad_shape)?)
                }
                DType::F64 => {
                    let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                    StoredTensor::F64(Tensor::new(&shape, data).map_err(bad_shape)?)
                }
            };
            tensors.push((name, tensor));
        }
        let rng_seed = r.u64()?;
        let step = r.u64()?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        let ckpt = Checkpoint {
            model,
            train,
            tensors,
            rng_seed,
            step,
        };
        ckpt.check_table()?;
        Ok(ckpt)
    }

    /// Every expected tensor present once with the right shape, nothing else.
    fn check_table(&self) -> Result<(), CheckpointError> {
        let expected = ModelParams::<Tensor<f32>>::expected_inventory(&self.model, self.train.se_enabled)
            .map_err(|e| CheckpointError::Config(e.to_string()))?;
        let mut seen: HashMap<&str, &[usize]> = HashMap::new();
        for (name, t) in &self.tensors {
            if seen.insert(name, t.shape()).is_some() {
                return Err(CheckpointError::DuplicateTensor(name.clone()));
            }
        }
        for (name, shape) in &expected {
            match seen.remove(name.as_str()) {
                None => return Err(CheckpointError::MissingTensor(name.clone())),
                Some(found) if found != shape.as_slice() => {
                    return Err(CheckpointError::Shape {
                        name: name.clone(),
                        expected: shape.clone(),
                        found: found.to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some((name, _)) = self.tensors.iter().find(|(n, _)| seen.contains_key(n.as_str())) {
            return Err(CheckpointError::UnexpectedTensor(name.clone()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn parse_configs(text: &str) -> Result<(ViTConfig, TrainConfig), CheckpointError> {
    let entries = parse_entries(text).map_err(|(line, msg)| CheckpointError::Config(format!("line {line}: {msg}")))?;
    let mut model = ViTConfig::toy();
    let mut train = TrainConfig::default();
    for e in &entries {
        set_model(&mut model, &e.key, &e.value)
            .or_else(|| set_train(&mut train, &e.key, &e.value))
            .unwrap_or_else(|| Err(format!("unknown key `{}`", e.key)))
            .map_err(CheckpointError::Config)?;
    }
    model.validate().map_err(|e| CheckpointError::Config(e.to_string()))?;
    Ok((model, train))
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(self.bytes.len()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn sized(&mut self) -> Result<&'a [u8], CheckpointError> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

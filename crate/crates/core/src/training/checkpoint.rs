//! The `UMSN` checkpoint container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "UMSN"
//! 4       4     format version, u32 little-endian
//! 8       8     metadata length L, u64 little-endian
//! 16      L     UTF-8 JSON metadata (everything but tensor contents)
//! 16+L    ...   tensor blobs, little-endian, in metadata `dtype`
//! ```
//!
//! Blobs hold every parameter (running statistics included) in name order,
//! then each optimizer slot kind in turn over the trainable parameters in
//! name order. The payload length must match the metadata exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optimizer::OptimizerKind;
use super::trainer::{TrainConfig, Trainer};
use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::{DType, Float, ParamStore, RngSnapshot, RngState, Tensor};

pub const CKPT_MAGIC: &[u8; 4] = b"UMSN";
pub const CKPT_VERSION: u32 = 1;

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub test_macro_f1: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

/// A named tensor held in `f64`, which represents both precisions exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedBlob {
    pub info: BlobInfo,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub epoch: usize,
    pub rng: RngSnapshot,
    pub best_accuracy: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub normalizer: Option<Normalizer>,
    pub held_out_user: Option<String>,
    pub classes: Vec<String>,
    pub dtype: DType,
    pub optimizer_kind: OptimizerKind,
    pub optimizer_step: u64,
    /// Name-sorted.
    pub params: Vec<NamedBlob>,
    /// `(slot name, trainable blobs in name order)`.
    pub slots: Vec<(String, Vec<NamedBlob>)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    model_config: ModelConfig,
    train_config: TrainConfig,
    epoch: usize,
    rng: RngSnapshot,
    best_accuracy: Option<f64>,
    history: Vec<EpochRecord>,
    normalizer: Option<Normalizer>,
    held_out_user: Option<String>,
    classes: Vec<String>,
    dtype: DType,
    optimizer: OptimizerMeta,
    params: Vec<BlobInfo>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerMeta {
    kind: OptimizerKind,
    step: u64,
    slots: Vec<String>,
}

fn blob<F: Float>(name: &str, t: &Tensor<F>, trainable: bool) -> NamedBlob {
    NamedBlob {
        info: BlobInfo {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            trainable,
        },
        data: t.to_f64_vec(),
    }
}

impl Checkpoint {
    pub fn capture<F: Float>(t: &Trainer<F>) -> Self {
        let ids = t.store.sorted_ids();
        let params = ids
            .iter()
            .map(|&id| {
                let p = t.store.get(id);
                blob(&p.name, &p.value, p.trainable)
            })
            .collect();
        let slots = t
            .optimizer
            .slot_names()
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let blobs = ids
                    .iter()
                    .filter(|&&id| t.store.get(id).trainable)
                    .map(|&id| blob(&t.store.get(id).name, &t.optimizer.slots[id.index()][k], true))
                    .collect();
                (name.to_string(), blobs)
            })
            .collect();
        Checkpoint {
            model_config: t.model.config.clone(),
            train_config: t.config.clone(),
            epoch: t.epoch,
            rng: t.rng.snapshot(),
            best_accuracy: t.best_accuracy,
            history: t.history.clone(),
            normalizer: t.normalizer.clone(),
            held_out_user: t.held_out_user.clone(),
            classes: t.classes.clone(),
            dtype: F::DTYPE,
            optimizer_kind: t.optimizer.config.kind,
            optimizer_step: t.optimizer.step,
            params,
            slots,
        }
    }

    /// Copies parameter values into a store built from the same config.
    pub fn load_params<F: Float>(&self, store: &mut ParamStore<F>) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::Integrity(format!(
                "checkpoint holds {} tensors, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for b in &self.params {
            let id = store
                .id(&b.info.name)
                .ok_or_else(|| Error::Integrity(format!("model has no parameter {:?}", b.info.name)))?;
            let t = Tensor::from_f64(b.info.shape.clone(), &b.data)?;
            store.set_value(id, t).map_err(|e| Error::Integrity(e.to_string()))?;
        }
        Ok(())
    }

    pub(crate) fn restore_into<F: Float>(&self, t: &mut Trainer<F>) -> Result<()> {
        if self.dtype != F::DTYPE {
            return Err(Error::Integrity(format!(
                "checkpoint stores {:?} values, trainer uses {:?}",
                self.dtype,
                F::DTYPE
            )));
        }
        self.load_params(&mut t.store)?;
        if self.optimizer_kind != t.optimizer.config.kind {
            return Err(Error::Integrity(
                "optimizer kind differs from the training config".into(),
            ));
        }
        for (k, (_, blobs)) in self.slots.iter().enumerate() {
            for b in blobs {
                let id = t
                    .store
                    .id(&b.info.name)
                    .ok_or_else(|| Error::Integrity(format!("optimizer slot for unknown {:?}", b.info.name)))?;
                t.optimizer.slots[id.index()][k] = Tensor::from_f64(b.info.shape.clone(), &b.data)?;
            }
        }
        t.optimizer.step = self.optimizer_step;
        t.rng = RngState::restore(self.rng);
        t.epoch = self.epoch;
        t.history = self.history.clone();
        t.best_accuracy = self.best_accuracy;
        t.normalizer = self.normalizer.clone();
        t.held_out_user = self.held_out_user.clone();
        t.classes = self.classes.clone();
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Meta {
            model_config: self.model_config.clone(),
            train_config: self.train_config.clone(),
            epoch: self.epoch,
            rng: self.rng,
            best_accuracy: self.best_accuracy,
            history: self.history.clone(),
            normalizer: self.normalizer.clone(),
            held_out_user: self.held_out_user.clone(),
            classes: self.classes.clone(),
            dtype: self.dtype,
            optimizer: OptimizerMeta {
                kind: self.optimizer_kind,
                step: self.optimizer_step,
                slots: self.slots.iter().map(|(n, _)| n.clone()).collect(),
            },
            params: self.params.iter().map(|b| b.info.clone()).collect(),
        };
        let json = serde_json::to_vec(&meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let blobs = self.params.iter().chain(self.slots.iter().flat_map(|(_, b)| b));
        for b in blobs {
            for &v in &b.data {
                match self.dtype {
                    DType::F32 => (v as f32).write_le(&mut out),
                    DType::F64 => v.write_le(&mut out),
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != CKPT_MAGIC {
            return Err(Error::Integrity("not a UMSN checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CKPT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: CKPT_VERSION,
            });
        }
        let json_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if json_len > body.len() {
            return Err(Error::Integrity("checkpoint truncated inside metadata".into()));
        }
        let meta: Meta =
            serde_json::from_slice(&body[..json_len]).map_err(|e| Error::Integrity(format!("metadata: {e}")))?;
        let payload = &body[json_len..];
        let width = meta.dtype.size_of();
        let numel = |i: &BlobInfo| i.shape.iter().product::<usize>();
        let trainable: Vec<&BlobInfo> = meta.params.iter().filter(|p| p.trainable).collect();
        let expected = meta.params.iter().map(numel).sum::<usize>()
            + meta.optimizer.slots.len() * trainable.iter().map(|i| numel(i)).sum::<usize>();
        if payload.len() != expected * width {
            return Err(Error::Integrity(format!(
                "payload holds {} bytes, metadata declares {}",
                payload.len(),
                expected * width
            )));
        }
        let mut offset = 0;
        let mut read = |info: &BlobInfo| -> NamedBlob {
            let n = numel(info);
            let chunk = &payload[offset..offset + n * width];
            offset += n * width;
            let data = chunk
                .chunks_exact(width)
                .map(|c| match meta.dtype {
                    DType::F32 => f64::from(f32::read_le(c)),
                    DType::F64 => f64::read_le(c),
                })
                .collect();
            NamedBlob {
                info: info.clone(),
                data,
            }
        };
        let params: Vec<NamedBlob> = meta.params.iter().map(&mut read).collect();
        let slots = meta
            .optimizer
            .slots
            .iter()
            .map(|name| (name.clone(), trainable.iter().map(|i| read(i)).collect()))
            .collect();
        Ok(Checkpoint {
            model_config: meta.model_config,
            train_config: meta.train_config,
            epoch: meta.epoch,
            rng: meta.rng,
            best_accuracy: meta.best_accuracy,
            history: meta.history,
            normalizer: meta.normalizer,
            held_out_user: meta.held_out_user,
            classes: meta.classes,
            dtype: meta.dtype,
            optimizer_kind: meta.optimizer.kind,
            optimizer_step: meta.optimizer.step,
            params,
            slots,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

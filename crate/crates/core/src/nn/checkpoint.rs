//! Binary checkpoint container.
//!
//! Byte layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "LTRSUMCK"
//! 8       4     u32 format version (currently 1)
//! 12      8     u64 header length H
//! 20      H     UTF-8 JSON header: model_config, vocab, tensors [{name, shape}],
//!               train_state (null or {epochs_done, steps, optimizer})
//! 20+H    ..    f64 parameter values, tensors in header order, row-major
//! ..      ..    Adam only: first moments then second moments, same order
//! ```
//!
//! Floats are stored as raw IEEE-754 bits, so save/load is lossless.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::tensors::Tensors;
use super::{Model, ModelConfig};
use crate::corpus::Vocab;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LTRSUMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd,
    Adam {
        t: u64,
        m: ModelParams,
        v: ModelParams,
    },
}

/// Where an interrupted training run resumes from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epochs_done: usize,
    pub steps: u64,
    pub optimizer: OptimizerState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocab,
    pub train_state: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum OptimizerMeta {
    Sgd,
    Adam { t: u64 },
}

#[derive(Serialize, Deserialize)]
struct TrainStateMeta {
    epochs_done: usize,
    steps: u64,
    optimizer: OptimizerMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    vocab: Vec<String>,
    tensors: Vec<TensorMeta>,
    train_state: Option<TrainStateMeta>,
}

fn push_params(buf: &mut Vec<u8>, p: &ModelParams) {
    for t in p.tensors() {
        for x in t.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model_config: self.model.config.clone(),
            vocab: self.vocab.tokens().to_vec(),
            tensors: self
                .model
                .params
                .tensors()
                .into_iter()
                .map(|t| TensorMeta {
                    name: t.name,
                    shape: t.shape,
                })
                .collect(),
            train_state: self.train_state.as_ref().map(|s| TrainStateMeta {
                epochs_done: s.epochs_done,
                steps: s.steps,
                optimizer: match &s.optimizer {
                    OptimizerState::Sgd => OptimizerMeta::Sgd,
                    OptimizerState::Adam { t, .. } => OptimizerMeta::Adam { t: *t },
                },
            }),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        push_params(&mut buf, &self.model.params);
        if let Some(TrainState {
            optimizer: OptimizerState::Adam { m, v, .. },
            ..
        }) = &self.train_state
        {
            push_params(&mut buf, m);
            push_params(&mut buf, v);
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let header_len = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| format!("bad header: {e}"))?;
        header.model_config.validate().map_err(|e| e.to_string())?;
        let vocab = Vocab::from_tokens(header.vocab).map_err(|e| e.to_string())?;
        if vocab.len() != header.model_config.vocab_size {
            return Err(format!(
                "vocabulary has {} tokens but the model expects {}",
                vocab.len(),
                header.model_config.vocab_size
            ));
        }

        let template = ModelParams::init(&header.model_config);
        {
            let expected = template.tensors();
            if expected.len() != header.tensors.len()
                || expected
                    .iter()
                    .zip(&header.tensors)
                    .any(|(a, b)| a.name != b.name || a.shape != b.shape)
            {
                return Err("tensor table does not match the model configuration".into());
            }
        }
        let params = r.params(&template)?;
        let train_state = match header.train_state {
            None => None,
            Some(meta) => Some(TrainState {
                epochs_done: meta.epochs_done,
                steps: meta.steps,
                optimizer: match meta.optimizer {
                    OptimizerMeta::Sgd => OptimizerState::Sgd,
                    OptimizerMeta::Adam { t } => OptimizerState::Adam {
                        t,
                        m: r.params(&template)?,
                        v: r.params(&template)?,
                    },
                },
            }),
        };
        if r.at != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.at));
        }
        Ok(Checkpoint {
            model: Model {
                config: header.model_config,
                params,
            },
            vocab,
            train_state,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.at..end];
                self.at = end;
                Ok(out)
            }
            None => Err("truncated checkpoint".into()),
        }
    }

    fn params(&mut self, template: &ModelParams) -> std::result::Result<ModelParams, String> {
        let mut p = template.clone();
        for t in p.tensors_mut() {
            for x in t.data.iter_mut() {
                *x = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
            }
        }
        Ok(p)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|message| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}

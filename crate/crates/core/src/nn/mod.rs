//! Toy encoder–decoder whose single decoder serves both summary generation
//! and per-segment ranking.

mod checkpoint;
mod layers;
mod model;
mod params;
pub mod tensors;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, OptimizerState, TrainState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{gelu, gelu_grad, Attention, FeedForward, LayerNorm, Linear};
pub use model::{
    ExampleLoss, ForwardTrace, Model, Objective, SegmentEncodings, TrainingExample,
};
pub use params::{DecoderLayer, EncoderLayer, ModelParams};
pub use tensors::{TensorMut, TensorRef, Tensors};

use crate::error::{Error, Result};

/// What the ranking pass cross-attends to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LtrMemory {
    /// Only the encoder vector at the segment's `<s>` position.
    #[default]
    BosOnly,
    /// Every position of the segment encoding.
    FullSegment,
}

/// Which projection turns ranking-pass decoder states into vocabulary logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LtrHead {
    /// Reuse the generation output projection.
    #[default]
    Tied,
    /// A separate two-layer network.
    Untied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_mult: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub seed: u64,
    pub ltr_memory: LtrMemory,
    pub ltr_head: LtrHead,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 32,
            n_heads: 2,
            n_layers: 1,
            ffn_mult: 2,
            vocab_size: 0,
            max_positions: 128,
            seed: 1,
            ltr_memory: LtrMemory::BosOnly,
            ltr_head: LtrHead::Tied,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("ffn_mult", self.ffn_mult),
            ("max_positions", self.max_positions),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size <= crate::corpus::Vocab::EXTRA as usize {
            return Err(Error::Config(format!(
                "vocab_size {} leaves no room for the reserved tokens",
                self.vocab_size
            )));
        }
        Ok(())
    }

    pub fn ffn_hidden(&self) -> usize {
        self.d_model * self.ffn_mult
    }
}

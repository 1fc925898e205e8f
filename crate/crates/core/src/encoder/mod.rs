//! Shared text encoder: token ids → hidden states → pooled embedding, with
//! exact gradients via the tape. Two architectures: a per-token residual MLP
//! (fast default) and a small pre-norm causal-attention stack.

mod forward;
mod params;

pub use forward::{
    encode, encode_prompt, last_n_pool, mean_pool, project, sinusoidal_positions, EncodedPrompt,
};
pub use params::{
    init_params, load_checkpoint, save_checkpoint, Checkpoint, ParamGrads, ParameterSet,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("token id {id} out of range for vocab size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("sequence length {len} exceeds max context {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("cannot encode an empty token sequence")]
    EmptySequence,
    #[error("non-finite values in {0}; aborting before backward")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint io: {0}")]
    CheckpointIo(#[from] std::io::Error),
    #[error("checkpoint parse: {0}")]
    CheckpointParse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    #[default]
    BagMlp,
    CausalAttention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "n")]
pub enum Pooling {
    #[default]
    Mean,
    /// Mean over the last min(n, L) token states; n = 1 is last-token pooling.
    LastN(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    PrePool,
    PostPool,
}

/// Optional learned projection to a smaller embedding dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub placement: Placement,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub max_context: usize,
    pub arch: Arch,
    pub seed: u64,
    #[serde(default)]
    pub pooling: Pooling,
    #[serde(default)]
    pub projection: Option<ProjectionConfig>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 0,
            hidden_dim: 64,
            num_layers: 1,
            num_heads: 4,
            max_context: 512,
            arch: Arch::BagMlp,
            seed: 0,
            pooling: Pooling::Mean,
            projection: None,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.vocab_size == 0 {
            return Err(EncoderError::InvalidConfig("vocab_size must be > 0".into()));
        }
        if self.hidden_dim == 0 || self.num_layers == 0 || self.max_context == 0 {
            return Err(EncoderError::InvalidConfig(
                "hidden_dim, num_layers and max_context must be > 0".into(),
            ));
        }
        if self.arch == Arch::CausalAttention {
            if self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
                return Err(EncoderError::InvalidConfig(format!(
                    "hidden_dim {} must be divisible by num_heads {}",
                    self.hidden_dim, self.num_heads
                )));
            }
        }
        if let Some(p) = &self.projection {
            if p.dim == 0 || p.dim > self.hidden_dim {
                return Err(EncoderError::InvalidConfig(format!(
                    "projection dim {} must be in 1..={}",
                    p.dim, self.hidden_dim
                )));
            }
        }
        if let Pooling::LastN(n) = self.pooling {
            if n == 0 {
                return Err(EncoderError::InvalidConfig("last-n pooling needs n >= 1".into()));
            }
        }
        Ok(())
    }

    /// Dimension of the embeddings this encoder produces.
    pub fn embedding_dim(&self) -> usize {
        self.projection.map_or(self.hidden_dim, |p| p.dim)
    }
}

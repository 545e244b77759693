//! Encoder-decoder Transformer: sinusoidal positions, multi-head attention,
//! optional decoder weight tying, pretrained-embedding loading and checkpoints.

mod checkpoint;
mod config;
mod model;
mod pretrained;

pub use checkpoint::Checkpoint;
pub use config::ModelConfig;
pub use model::{causal_mask, positional_encoding, AttentionTrace, Mode, TransformerModel};
pub use pretrained::{load_pretrained_embeddings, CoverageReport, EmbeddingSide, WordVectors};

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum TransformerError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("{0}")]
    Contract(String),
    #[error("vectors line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

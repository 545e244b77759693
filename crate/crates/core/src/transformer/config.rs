use serde::{Deserialize, Serialize};

use super::TransformerError;

/// Architecture hyperparameters. Defaults follow the 2-layer G2T recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub tie_decoder_embeddings: bool,
    pub max_positions: usize,
    /// Multiply looked-up embeddings by √d_model before adding positions.
    pub scale_embeddings: bool,
    /// Width of the source embedding table when it differs from `d_model`
    /// (pretrained vectors); a learned projection maps it to `d_model`.
    pub src_embed_dim: Option<usize>,
    pub tgt_embed_dim: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 2,
            d_model: 512,
            num_heads: 8,
            ffn_dim: 2048,
            dropout: 0.1,
            src_vocab_size: 0,
            tgt_vocab_size: 0,
            tie_decoder_embeddings: false,
            max_positions: 512,
            scale_embeddings: true,
            src_embed_dim: None,
            tgt_embed_dim: None,
        }
    }
}

impl ModelConfig {
    pub fn with_vocab(mut self, src: usize, tgt: usize) -> Self {
        self.src_vocab_size = src;
        self.tgt_vocab_size = tgt;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<(), TransformerError> {
        let fail = |m: String| Err(TransformerError::Contract(m));
        if self.num_layers == 0 {
            return fail("num_layers must be positive".into());
        }
        if self.num_heads == 0 || self.d_model == 0 || self.d_model % self.num_heads != 0 {
            return fail(format!(
                "d_model {} must be a positive multiple of num_heads {}",
                self.d_model, self.num_heads
            ));
        }
        if self.ffn_dim == 0 || self.max_positions == 0 {
            return fail("ffn_dim and max_positions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.src_vocab_size < 5 || self.tgt_vocab_size < 5 {
            return fail("vocabularies need the four specials plus at least one token".into());
        }
        if self.src_embed_dim == Some(0) || self.tgt_embed_dim == Some(0) {
            return fail("embedding width must be positive".into());
        }
        Ok(())
    }
}

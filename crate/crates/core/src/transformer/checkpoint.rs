//! Binary checkpoint layout:
//!
//! ```text
//! magic   8 bytes   "G2TCKPT1"
//! len     u64 LE    header length in bytes
//! header  JSON      { config, source_vocab, target_vocab, tensors: [{name, shape}] }
//! blobs   f32 LE    tensors in header order, row-major
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::numerics::{Real, SeededRng, Tensor};

use super::{ModelConfig, TransformerError, TransformerModel};

const MAGIC: &[u8; 8] = b"G2TCKPT1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabEntry {
    tokens: Vec<String>,
    freqs: Vec<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    source_vocab: VocabEntry,
    target_vocab: VocabEntry,
    tensors: Vec<TensorEntry>,
}

/// A model together with the vocabularies it was trained with.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: TransformerModel<T>,
    pub source_vocab: Vocabulary,
    pub target_vocab: Vocabulary,
}

fn vocab_entry(v: &Vocabulary) -> VocabEntry {
    VocabEntry {
        tokens: v.tokens().to_vec(),
        freqs: v.frequencies().to_vec(),
    }
}

fn bad(msg: impl Into<String>) -> TransformerError {
    TransformerError::Checkpoint(msg.into())
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>, TransformerError> {
        let params = self.model.params();
        let header = Header {
            config: self.model.config().clone(),
            source_vocab: vocab_entry(&self.source_vocab),
            target_vocab: vocab_entry(&self.target_vocab),
            tensors: params
                .iter()
                .map(|(_, p)| TensorEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, p) in params.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TransformerError> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(e.to_string()))?;
        let source_vocab = Vocabulary::from_tokens(header.source_vocab.tokens, header.source_vocab.freqs)
            .map_err(|e| bad(e.to_string()))?;
        let target_vocab = Vocabulary::from_tokens(header.target_vocab.tokens, header.target_vocab.freqs)
            .map_err(|e| bad(e.to_string()))?;

        // Structure comes from the config; values are filled in by name.
        let mut model = TransformerModel::<T>::new(header.config, &mut SeededRng::new(0))?;
        if model.params().len() != header.tensors.len() {
            return Err(bad(format!(
                "expected {} tensors, header lists {}",
                model.params().len(),
                header.tensors.len()
            )));
        }
        let mut offset = 16 + len;
        for entry in header.tensors {
            let id = model
                .params()
                .find(&entry.name)
                .ok_or_else(|| bad(format!("unknown tensor {}", entry.name)))?;
            if model.params().value(id).shape() != entry.shape.as_slice() {
                return Err(bad(format!("tensor {} has shape {:?}", entry.name, entry.shape)));
            }
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 4 * n)
                .ok_or_else(|| bad(format!("truncated data for {}", entry.name)))?;
            offset += 4 * n;
            let data = raw
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect();
            model.params_mut().replace(id, Tensor::new(&entry.shape, data)?);
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Checkpoint {
            model,
            source_vocab,
            target_vocab,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TransformerError> {
        fs::write(path, self.to_bytes()?).map_err(|e| TransformerError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, TransformerError> {
        let bytes = fs::read(path).map_err(|e| TransformerError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }
}

use std::collections::HashMap;

use serde::Serialize;

use crate::corpus::Vocabulary;
use crate::numerics::{Real, SeededRng};

use super::model::{embedding_init, projection_init};
use super::{TransformerError, TransformerModel};

/// Word vectors in textual word2vec layout.
#[derive(Debug, Clone)]
pub struct WordVectors {
    pub dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    /// Parses `word v1 v2 ...` lines, with an optional leading `count dim` header.
    pub fn parse(text: &str) -> Result<Self, TransformerError> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                dim = Some(fields[1].parse::<usize>().expect("checked"));
                continue;
            }
            if fields.len() < 2 {
                return Err(TransformerError::Parse {
                    line: line_no,
                    message: "expected a word followed by values".into(),
                });
            }
            let values = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| TransformerError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            match dim {
                Some(d) if d != values.len() => {
                    return Err(TransformerError::Parse {
                        line: line_no,
                        message: format!("expected {d} values, found {}", values.len()),
                    })
                }
                None => dim = Some(values.len()),
                _ => {}
            }
            vectors.insert(fields[0].to_owned(), values);
        }
        let dim = dim.ok_or(TransformerError::Parse {
            line: 0,
            message: "no vectors".into(),
        })?;
        Ok(WordVectors { dim, vectors })
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EmbeddingSide {
    Encoder,
    Decoder,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub matched: usize,
    pub total: usize,
    pub dim: usize,
    pub projected: bool,
}

impl CoverageReport {
    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.matched as f64 / self.total as f64
        }
    }
}

/// Overwrites embedding rows of in-vocabulary tokens with pretrained vectors.
///
/// Unmatched rows keep their random values. When the vector width differs
/// from the current table width, the table is re-created at the vector width
/// and a trainable projection to `d_model` is added.
pub fn load_pretrained_embeddings<T: Real>(
    model: &mut TransformerModel<T>,
    vectors: &WordVectors,
    side: EmbeddingSide,
    vocab: &Vocabulary,
    rng: &mut SeededRng,
) -> Result<CoverageReport, TransformerError> {
    let is_source = side == EmbeddingSide::Encoder;
    let d_model = model.config().d_model;
    let (ids, vocab_size) = if is_source {
        (model.src_embed.clone(), model.config().src_vocab_size)
    } else {
        (model.tgt_embed.clone(), model.config().tgt_vocab_size)
    };
    if vocab.len() != vocab_size {
        return Err(TransformerError::Contract(format!(
            "vocabulary has {} entries but the model expects {vocab_size}",
            vocab.len()
        )));
    }
    let current = model.params().value(ids.table).cols();
    let mut projected = ids.proj.is_some();
    if vectors.dim != current {
        let table = embedding_init::<T>(vocab_size, vectors.dim, rng);
        model.params_mut().replace(ids.table, table);
        // the table only changes width when a projection is (or becomes) present
        let proj = projection_init::<T>(vectors.dim, d_model, rng);
        let pid = match ids.proj {
            Some(pid) => {
                model.params_mut().replace(pid, proj);
                pid
            }
            None => {
                let prefix = if is_source { "encoder" } else { "decoder" };
                model.params_mut().add(format!("{prefix}.embed_proj"), proj)
            }
        };
        model.set_embed_proj(is_source, Some(pid));
        projected = true;
        if is_source {
            model.config_mut().src_embed_dim = Some(vectors.dim);
        } else {
            model.config_mut().tgt_embed_dim = Some(vectors.dim);
        }
    }
    let mut matched = 0;
    let table = model.params_mut().value_mut(ids.table);
    for (id, tok) in vocab.tokens().iter().enumerate() {
        if Vocabulary::is_special(id) {
            continue;
        }
        if let Some(v) = vectors.get(tok) {
            matched += 1;
            for (dst, &src) in table.row_mut(id).iter_mut().zip(v) {
                *dst = T::from_f64_lossy(src);
            }
        }
    }
    Ok(CoverageReport {
        matched,
        total: vocab.num_regular(),
        dim: vectors.dim,
        projected,
    })
}

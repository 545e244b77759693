//! Greedy, beam and ensemble decoding with attention-based `<unk>` replacement.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{encode, Vocabulary, BOS_ID, EOS_ID, PAD_ID, UNK_ID};
use crate::numerics::{Real, Tensor};
use crate::transformer::{AttentionTrace, TransformerError, TransformerModel};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Model(#[from] TransformerError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Token ids beginning with `<s>`; ends with `</s>` when finished.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// Head-averaged cross-attention, one vector per generated token.
    pub attention: Vec<Vec<f64>>,
    pub finished: bool,
}

impl Hypothesis {
    fn start() -> Self {
        Hypothesis {
            tokens: vec![BOS_ID],
            log_prob: 0.0,
            attention: Vec::new(),
            finished: false,
        }
    }

    fn extend(&self, token: usize, log_p: f64, attention: &[f64]) -> Self {
        let mut tokens = self.tokens.clone();
        tokens.push(token);
        let mut att = self.attention.clone();
        att.push(attention.to_vec());
        Hypothesis {
            tokens,
            log_prob: self.log_prob + log_p,
            attention: att,
            finished: token == EOS_ID,
        }
    }

    /// Number of generated tokens, `</s>` included.
    pub fn generated_len(&self) -> usize {
        self.tokens.len() - 1
    }

    /// Generated ids without `<s>` and `</s>`.
    pub fn output_ids(&self) -> &[usize] {
        let body = &self.tokens[1..];
        if self.finished {
            &body[..body.len() - 1]
        } else {
            body
        }
    }

    /// `log_prob / length^alpha`.
    pub fn normalized_score(&self, alpha: f64) -> f64 {
        let len = self.generated_len().max(1) as f64;
        self.log_prob / len.powf(alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam_width: usize,
    /// Generated-token cap including `</s>`; `None` means `1.5·|src| + 5`.
    pub max_length: Option<usize>,
    pub alpha: f64,
    pub replace_unk: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_width: 4,
            max_length: None,
            alpha: 1.0,
            replace_unk: true,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.beam_width == 0 {
            return Err(DecodeError::Config("beam width must be at least 1".into()));
        }
        if self.max_length == Some(0) {
            return Err(DecodeError::Config("max length must be at least 1".into()));
        }
        Ok(())
    }

    pub fn effective_max_length(&self, source_len: usize, max_positions: usize) -> usize {
        let default = (1.5 * source_len as f64).ceil() as usize + 5;
        self.max_length.unwrap_or(default).min(max_positions).max(1)
    }
}

/// Models combined by averaging their next-token distributions. A single
/// model is an ensemble of one.
#[derive(Debug, Clone)]
pub struct Ensemble<'m, T> {
    members: Vec<&'m TransformerModel<T>>,
}

impl<'m, T: Real> Ensemble<'m, T> {
    pub fn new(members: Vec<&'m TransformerModel<T>>) -> Result<Self, DecodeError> {
        let first = members
            .first()
            .ok_or_else(|| DecodeError::Config("an ensemble needs at least one model".into()))?;
        let (src, tgt) = (first.config().src_vocab_size, first.config().tgt_vocab_size);
        for (i, m) in members.iter().enumerate() {
            if m.config().tgt_vocab_size != tgt || m.config().src_vocab_size != src {
                return Err(DecodeError::Config(format!(
                    "member {i} has vocabulary sizes {}/{}, expected {src}/{tgt}",
                    m.config().src_vocab_size,
                    m.config().tgt_vocab_size
                )));
            }
        }
        Ok(Ensemble { members })
    }

    pub fn single(model: &'m TransformerModel<T>) -> Self {
        Ensemble { members: vec![model] }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn target_vocab_size(&self) -> usize {
        self.members[0].config().tgt_vocab_size
    }

    fn max_positions(&self) -> usize {
        self.members.iter().map(|m| m.config().max_positions).min().unwrap_or(1)
    }

    /// One encoder memory per member.
    pub fn encode(&self, source: &[usize]) -> Result<Vec<Tensor<T>>, DecodeError> {
        self.members
            .iter()
            .map(|m| m.encode_source(source).map_err(DecodeError::from))
            .collect()
    }
}

fn probabilities<T: Real>(logits: &[T]) -> Vec<f64> {
    let max = logits.iter().map(|v| v.to_f64_lossy()).fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|v| (v.to_f64_lossy() - max).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

/// Mean of the members' softmax distributions after `prefix`, plus the
/// member-averaged attention trace.
pub fn ensemble_distribution<T: Real>(
    ensemble: &Ensemble<'_, T>,
    memories: &[Tensor<T>],
    prefix: &[usize],
) -> Result<(Vec<f64>, AttentionTrace), DecodeError> {
    if memories.len() != ensemble.len() {
        return Err(DecodeError::Contract(format!(
            "{} memories for {} ensemble members",
            memories.len(),
            ensemble.len()
        )));
    }
    let mut mean: Vec<f64> = Vec::new();
    let mut trace: Option<AttentionTrace> = None;
    for (i, (model, memory)) in ensemble.members.iter().zip(memories).enumerate() {
        let (logits, att) = model.decode_step(memory, prefix)?;
        let p = probabilities(&logits);
        let k = (i + 1) as f64;
        if i == 0 {
            mean = p;
            trace = Some(att);
        } else {
            for (m, v) in mean.iter_mut().zip(&p) {
                *m += (v - *m) / k;
            }
            let t = trace.as_mut().expect("set on first member");
            for (m, v) in t.mean.iter_mut().zip(&att.mean) {
                *m += (v - *m) / k;
            }
        }
    }
    Ok((mean, trace.expect("ensemble is non-empty")))
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Picks the most probable token at every step; ties go to the lowest id.
pub fn greedy_decode<T: Real>(
    ensemble: &Ensemble<'_, T>,
    source: &[usize],
    config: &DecodeConfig,
) -> Result<Hypothesis, DecodeError> {
    config.validate()?;
    let memories = ensemble.encode(source)?;
    let max_len = config.effective_max_length(source.len(), ensemble.max_positions());
    let mut hyp = Hypothesis::start();
    while !hyp.finished && hyp.generated_len() < max_len {
        let (p, trace) = ensemble_distribution(ensemble, &memories, &hyp.tokens)?;
        let best = argmax(&p);
        hyp = hyp.extend(best, p[best].ln(), &trace.mean);
    }
    Ok(hyp)
}

/// Standard beam search. Returns finished hypotheses (plus any truncated at
/// the length cap) ranked by length-normalized score.
pub fn beam_search<T: Real>(
    ensemble: &Ensemble<'_, T>,
    source: &[usize],
    config: &DecodeConfig,
) -> Result<Vec<Hypothesis>, DecodeError> {
    config.validate()?;
    let memories = ensemble.encode(source)?;
    let max_len = config.effective_max_length(source.len(), ensemble.max_positions());
    let mut live = vec![Hypothesis::start()];
    let mut completed = Vec::new();
    for _ in 0..max_len {
        let mut candidates: Vec<(f64, usize, usize, f64)> = Vec::new();
        let mut traces = Vec::with_capacity(live.len());
        for (h, hyp) in live.iter().enumerate() {
            let (p, trace) = ensemble_distribution(ensemble, &memories, &hyp.tokens)?;
            for (token, &prob) in p.iter().enumerate() {
                let lp = prob.ln();
                candidates.push((hyp.log_prob + lp, h, token, lp));
            }
            traces.push(trace);
        }
        // Every candidate has the same length, so raw log-probability ranks
        // them exactly as the normalized score does.
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
        candidates.truncate(config.beam_width);
        let mut next = Vec::with_capacity(candidates.len());
        for (_, h, token, lp) in candidates {
            let hyp = live[h].extend(token, lp, &traces[h].mean);
            if hyp.finished {
                completed.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    completed.extend(live);
    completed.sort_by(|a, b| b.normalized_score(config.alpha).total_cmp(&a.normalized_score(config.alpha)));
    Ok(completed)
}

/// Best hypothesis under `config`: greedy for width 1, beam search otherwise.
pub fn decode_best<T: Real>(
    ensemble: &Ensemble<'_, T>,
    source: &[usize],
    config: &DecodeConfig,
) -> Result<Hypothesis, DecodeError> {
    if config.beam_width == 1 {
        greedy_decode(ensemble, source, config)
    } else {
        Ok(beam_search(ensemble, source, config)?.swap_remove(0))
    }
}

/// Detokenizes a hypothesis, substituting each `<unk>` with the source
/// token under that step's strongest attention (lowest index on ties).
pub fn replace_unk<S: AsRef<str>>(
    hypothesis: &Hypothesis,
    source: &[S],
    vocab: &Vocabulary,
) -> Result<Vec<String>, DecodeError> {
    let generated = &hypothesis.tokens[1..];
    if hypothesis.attention.len() != generated.len() {
        return Err(DecodeError::Contract(format!(
            "{} attention vectors for {} generated tokens",
            hypothesis.attention.len(),
            generated.len()
        )));
    }
    let mut out = Vec::with_capacity(generated.len());
    for (&id, att) in generated.iter().zip(&hypothesis.attention) {
        match id {
            EOS_ID | BOS_ID | PAD_ID => {}
            UNK_ID => {
                if att.len() != source.len() || att.is_empty() {
                    return Err(DecodeError::Contract(format!(
                        "attention over {} positions for a {}-token source",
                        att.len(),
                        source.len()
                    )));
                }
                out.push(source[argmax(att)].as_ref().to_string());
            }
            _ => out.push(vocab.token(id).unwrap_or(crate::corpus::UNK).to_string()),
        }
    }
    Ok(out)
}

fn detokenize(hypothesis: &Hypothesis, vocab: &Vocabulary) -> Vec<String> {
    hypothesis
        .output_ids()
        .iter()
        .filter(|&&id| id != PAD_ID && id != BOS_ID)
        .map(|&id| vocab.token(id).unwrap_or(crate::corpus::UNK).to_string())
        .collect()
}

/// Translates every sentence (in parallel, order preserved). Empty source
/// lines give empty translations.
pub fn translate_corpus<T: Real, S: AsRef<str> + Sync>(
    ensemble: &Ensemble<'_, T>,
    sources: &[Vec<S>],
    source_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
    config: &DecodeConfig,
) -> Result<Vec<Vec<String>>, DecodeError> {
    config.validate()?;
    if target_vocab.len() != ensemble.target_vocab_size() {
        return Err(DecodeError::Config(format!(
            "target vocabulary has {} entries, model expects {}",
            target_vocab.len(),
            ensemble.target_vocab_size()
        )));
    }
    sources
        .par_iter()
        .map(|sentence| {
            if sentence.is_empty() {
                return Ok(Vec::new());
            }
            let ids = encode(sentence, source_vocab, false);
            let hyp = decode_best(ensemble, &ids, config)?;
            if config.replace_unk {
                replace_unk(&hyp, sentence, target_vocab)
            } else {
                Ok(detokenize(&hyp, target_vocab))
            }
        })
        .collect()
}

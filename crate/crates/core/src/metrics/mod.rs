//! Corpus-level BLEU-1..4, ROUGE-L and METEOR over whitespace tokens.

mod bleu;
mod meteor;
mod rouge;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{bleu, sentence_bleu, BleuScore};
pub use meteor::{align, meteor, sentence_stats, stem, MeteorStats};
pub use rouge::{lcs_len, rouge_l, rouge_l_sentence};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("hypotheses and references are not aligned: {hyps} vs {refs} lines")]
    Alignment { hyps: usize, refs: usize },
    #[error("BLEU order must be between 1 and 4, got {0}")]
    Order(usize),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn check_aligned(hyps: usize, refs: usize) -> Result<(), MetricError> {
    if hyps == refs {
        Ok(())
    } else {
        Err(MetricError::Alignment { hyps, refs })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    /// Lowercase both sides before scoring.
    pub lowercase: bool,
    /// Recall weight of the ROUGE-L F-measure; 1 gives F1.
    pub rouge_beta: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            lowercase: true,
            rouge_beta: 1.0,
        }
    }
}

/// Every score the evaluator reports, all in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub sentences: usize,
    pub bleu: [f64; 4],
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    /// Smoothed BLEU-4 per line, for qualitative listings.
    pub sentence_bleu4: Vec<f64>,
}

impl MetricReport {
    pub fn bleu4(&self) -> f64 {
        self.bleu[3]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (n, b) in self.bleu.iter().enumerate() {
            let _ = writeln!(s, "BLEU-{}   {:6.2}", n + 1, b);
        }
        let _ = writeln!(s, "ROUGE-L  {:6.2}", self.rouge_l);
        let _ = writeln!(s, "METEOR   {:6.2}", self.meteor);
        let _ = writeln!(s, "BP       {:6.4}", self.brevity_penalty);
        let _ = writeln!(s, "lines    {}", self.sentences);
        s
    }
}

fn prepare(text: &str, lowercase: bool) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| {
            l.split_whitespace()
                .map(|t| if lowercase { t.to_lowercase() } else { t.to_string() })
                .collect()
        })
        .collect()
}

pub fn evaluate_tokens<S: AsRef<str>>(
    hyps: &[Vec<S>],
    refs: &[Vec<S>],
    options: MetricOptions,
) -> Result<MetricReport, MetricError> {
    let b4 = bleu(hyps, refs, 4)?;
    let mut scores = [0.0; 4];
    for (n, slot) in scores.iter_mut().enumerate() {
        *slot = bleu(hyps, refs, n + 1)?.score;
    }
    Ok(MetricReport {
        sentences: hyps.len(),
        bleu: scores,
        precisions: b4.precisions,
        brevity_penalty: b4.brevity_penalty,
        rouge_l: rouge_l(hyps, refs, options.rouge_beta)?,
        meteor: meteor(hyps, refs)?,
        sentence_bleu4: hyps.iter().zip(refs).map(|(h, r)| sentence_bleu(h, r, 4)).collect(),
    })
}

/// Scores line-aligned hypothesis and reference texts.
pub fn evaluate_texts(hyp_text: &str, ref_text: &str, options: MetricOptions) -> Result<MetricReport, MetricError> {
    let hyps = prepare(hyp_text, options.lowercase);
    let refs = prepare(ref_text, options.lowercase);
    evaluate_tokens(&hyps, &refs, options)
}

pub fn evaluate(hyp_path: &Path, ref_path: &Path, options: MetricOptions) -> Result<MetricReport, MetricError> {
    let read = |p: &Path| {
        fs::read_to_string(p).map_err(|source| MetricError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    evaluate_texts(&read(hyp_path)?, &read(ref_path)?, options)
}

use std::collections::HashMap;

use serde::Serialize;

use super::{check_aligned, MetricError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuScore {
    /// Cumulative BLEU-N in percent.
    pub score: f64,
    /// Clipped n-gram precision per order, in percent.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            let key: Vec<&str> = w.iter().map(AsRef::as_ref).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and hypothesis n-gram total for one sentence and order.
pub(crate) fn clipped<S: AsRef<str>>(hyp: &[S], reference: &[S], n: usize) -> (usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matched = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, hyp.len().saturating_sub(n - 1))
}

pub(crate) fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Corpus-level cumulative BLEU over orders `1..=max_n`, single reference,
/// no smoothing: any order with zero matches gives a score of 0.
pub fn bleu<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>], max_n: usize) -> Result<BleuScore, MetricError> {
    check_aligned(hyps.len(), refs.len())?;
    if !(1..=4).contains(&max_n) {
        return Err(MetricError::Order(max_n));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let (m, t) = clipped(h, r, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
    }
    let precisions: Vec<f64> = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
        .collect();
    let bp = brevity_penalty(hyp_len, ref_len);
    let score = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / max_n as f64;
        bp * log_mean.exp()
    };
    Ok(BleuScore {
        score: 100.0 * score,
        precisions: precisions.iter().map(|p| 100.0 * p).collect(),
        brevity_penalty: bp,
        hyp_len,
        ref_len,
        matches,
        totals,
    })
}

/// Sentence-level BLEU-`max_n` in percent with add-one smoothing on orders ≥ 2.
pub fn sentence_bleu<S: AsRef<str>>(hyp: &[S], reference: &[S], max_n: usize) -> f64 {
    if hyp.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (m, t) = clipped(hyp, reference, n);
        let p = if n == 1 {
            if m == 0 {
                return 0.0;
            }
            m as f64 / t as f64
        } else {
            (m + 1) as f64 / (t + 1) as f64
        };
        log_sum += p.ln();
    }
    100.0 * brevity_penalty(hyp.len(), reference.len()) * (log_sum / max_n as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
        lines.iter().map(|l| tokenize(l)).collect()
    }

    #[test]
    fn identical_is_exactly_one_hundred() {
        let c = corpus(&["the cat sat on the mat", "a b c d e"]);
        for n in 1..=4 {
            assert_eq!(bleu(&c, &c, n).unwrap().score, 100.0);
        }
    }

    #[test]
    fn short_hypothesis_brevity() {
        let h = corpus(&["the cat sat"]);
        let r = corpus(&["the cat sat down"]);
        let s = bleu(&h, &r, 1).unwrap();
        let expected = 100.0 * (1.0f64 - 4.0 / 3.0).exp();
        assert!((s.score - expected).abs() < 1e-9);
        assert!((s.score - 71.65).abs() < 0.01);
    }

    #[test]
    fn clipping_and_zero_orders() {
        let h = corpus(&["the the the the"]);
        let r = corpus(&["the cat"]);
        let s = bleu(&h, &r, 1).unwrap();
        assert_eq!(s.matches[0], 1);
        assert_eq!(bleu(&h, &r, 2).unwrap().score, 0.0);
        assert!(bleu(&h, &corpus(&["a", "b"]), 1).is_err());
        assert!(bleu(&h, &r, 5).is_err());
    }

    #[test]
    fn sentence_level_smoothing() {
        let a = tokenize("i am here");
        assert_eq!(sentence_bleu(&a, &a, 4), 100.0);
        let b = tokenize("completely different words");
        assert_eq!(sentence_bleu(&b, &a, 4), 0.0);
        let c = tokenize("i am there");
        let s = sentence_bleu(&c, &a, 4);
        assert!(s > 0.0 && s < 100.0);
    }
}

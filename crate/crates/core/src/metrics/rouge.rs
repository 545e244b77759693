use super::{check_aligned, MetricError};

/// Longest common subsequence length by dynamic programming.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure for one sentence pair, in [0, 1].
pub fn rouge_l_sentence<S: AsRef<str>>(hyp: &[S], reference: &[S], beta: f64) -> f64 {
    let lcs = lcs_len(hyp, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / hyp.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Corpus ROUGE-L in percent: mean of per-sentence F-measures. `beta = 1`
/// is the balanced F1.
pub fn rouge_l<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>], beta: f64) -> Result<f64, MetricError> {
    check_aligned(hyps.len(), refs.len())?;
    if hyps.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| rouge_l_sentence(h, r, beta))
        .sum();
    Ok(100.0 * total / hyps.len() as f64)
}

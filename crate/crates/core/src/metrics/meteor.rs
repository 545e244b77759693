use serde::Serialize;

use super::{check_aligned, MetricError};

const ALPHA: f64 = 0.9;
const GAMMA: f64 = 0.5;
const BETA: f64 = 3.0;

const SUFFIXES: &[&str] = &[
    "ations", "ungen", "ation", "ingly", "ness", "ment", "ings", "edly", "ing", "ies", "ed", "es", "en", "er", "s",
    "e", "n",
];

/// Crude suffix stripper shared by English and German text.
pub fn stem(word: &str) -> &str {
    for suf in SUFFIXES {
        if let Some(base) = word.strip_suffix(suf) {
            if base.chars().count() >= 3 {
                return base;
            }
        }
    }
    word
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MeteorStats {
    pub matches: usize,
    pub chunks: usize,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl MeteorStats {
    fn add(&mut self, o: MeteorStats) {
        self.matches += o.matches;
        self.chunks += o.chunks;
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }

    /// Score in [0, 1]: recall-weighted harmonic mean times the
    /// fragmentation factor `1 - 0.5·(chunks/matches)³`.
    pub fn score(&self) -> f64 {
        if self.matches == 0 {
            return 0.0;
        }
        let m = self.matches as f64;
        let p = m / self.hyp_len as f64;
        let r = m / self.ref_len as f64;
        let fmean = p * r / (ALPHA * p + (1.0 - ALPHA) * r);
        let penalty = GAMMA * (self.chunks as f64 / m).powf(BETA);
        fmean * (1.0 - penalty)
    }
}

/// Aligns unigrams in two stages (exact form, then stem). Within a stage each
/// hypothesis token takes the reference position that continues the current
/// chunk when possible, otherwise the leftmost free one.
pub fn align<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> Vec<(usize, usize)> {
    let mut hyp_used = vec![None::<usize>; hyp.len()];
    let mut ref_used = vec![false; reference.len()];
    let stages: [fn(&str) -> &str; 2] = [|w| w, stem];
    for key in stages {
        for i in 0..hyp.len() {
            if hyp_used[i].is_some() {
                continue;
            }
            let h = key(hyp[i].as_ref());
            let candidates: Vec<usize> = (0..reference.len())
                .filter(|&j| !ref_used[j] && key(reference[j].as_ref()) == h)
                .collect();
            let continuing = i
                .checked_sub(1)
                .and_then(|p| hyp_used[p])
                .map(|r| r + 1)
                .filter(|r| candidates.contains(r));
            if let Some(j) = continuing.or_else(|| candidates.first().copied()) {
                hyp_used[i] = Some(j);
                ref_used[j] = true;
            }
        }
    }
    hyp_used
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i, r)))
        .collect()
}

pub fn sentence_stats<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> MeteorStats {
    let alignment = align(hyp, reference);
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for &(h, r) in &alignment {
        match prev {
            Some((ph, pr)) if h == ph + 1 && r == pr + 1 => {}
            _ => chunks += 1,
        }
        prev = Some((h, r));
    }
    MeteorStats {
        matches: alignment.len(),
        chunks,
        hyp_len: hyp.len(),
        ref_len: reference.len(),
    }
}

/// Corpus METEOR in percent, aggregated over summed sentence statistics.
pub fn meteor<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<f64, MetricError> {
    check_aligned(hyps.len(), refs.len())?;
    let mut total = MeteorStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(sentence_stats(h, r));
    }
    Ok(100.0 * total.score())
}

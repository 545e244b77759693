//! Parallel gloss/text corpora: loading, ASL prefix stripping, frequency
//! thresholding, vocabularies and descriptive statistics.

mod stats;
mod synthetic;
mod vocab;

pub use stats::{corpus_statistics, CorpusStats, SplitStats};
pub use synthetic::{synthetic_corpus, synthetic_pair};
pub use vocab::{build_vocab, decode, encode, Vocabulary, BOS, BOS_ID, EOS, EOS_ID, PAD, PAD_ID, UNK, UNK_ID};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Prefixes removed from ASLG-PC12 glosses during preprocessing.
pub const DEFAULT_ASL_PREFIXES: &[&str] = &["X-", "DESC-"];

/// File suffix for the gloss side of a split.
pub const SOURCE_SUFFIX: &str = "gloss";
/// File suffix for the spoken-language side of a split.
pub const TARGET_SUFFIX: &str = "txt";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line counts differ: {source_lines} source lines vs {target_lines} target lines")]
    Alignment {
        source_lines: usize,
        target_lines: usize,
    },
    #[error("{0}: corpus is empty")]
    EmptyCorpus(String),
    #[error("line {line}: empty {side} sentence")]
    EmptySentence { line: usize, side: Side },
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}:{line}: malformed vocabulary entry")]
    VocabFormat { path: String, line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(CorpusError::Config(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Source => "source",
            Side::Target => "target",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub id: usize,
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl SentencePair {
    pub fn side(&self, side: Side) -> &[String] {
        match side {
            Side::Source => &self.source,
            Side::Target => &self.target,
        }
    }

    fn side_mut(&mut self, side: Side) -> &mut Vec<String> {
        match side {
            Side::Source => &mut self.source,
            Side::Target => &mut self.target,
        }
    }
}

/// Aligned sentence pairs grouped by split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub source_lang: String,
    pub target_lang: String,
    splits: BTreeMap<Split, Vec<SentencePair>>,
}

impl ParallelCorpus {
    pub fn new(source_lang: impl Into<String>, target_lang: impl Into<String>) -> Self {
        ParallelCorpus {
            source_lang: source_lang.into(),
            target_lang: target_lang.into(),
            splits: BTreeMap::new(),
        }
    }

    pub fn split(&self, split: Split) -> Option<&[SentencePair]> {
        self.splits.get(&split).map(Vec::as_slice)
    }

    pub fn pairs(&self, split: Split) -> &[SentencePair] {
        self.split(split).unwrap_or(&[])
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.splits.contains_key(&split)
    }

    pub fn insert_split(&mut self, split: Split, pairs: Vec<SentencePair>) {
        self.splits.insert(split, pairs);
    }

    /// Moves every split of `other` into `self`, replacing splits present in both.
    pub fn merge(&mut self, other: ParallelCorpus) {
        self.splits.extend(other.splits);
    }

    pub fn splits(&self) -> impl Iterator<Item = (Split, &[SentencePair])> {
        self.splits.iter().map(|(s, p)| (*s, p.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.splits.values().all(Vec::is_empty)
    }

    /// Builds a single split from in-memory text, one sentence per line.
    pub fn from_texts(source: &str, target: &str, split: Split) -> Result<Self, CorpusError> {
        let src: Vec<&str> = source.lines().collect();
        let tgt: Vec<&str> = target.lines().collect();
        if src.is_empty() && tgt.is_empty() {
            return Err(CorpusError::EmptyCorpus(split.to_string()));
        }
        if src.len() != tgt.len() {
            return Err(CorpusError::Alignment {
                source_lines: src.len(),
                target_lines: tgt.len(),
            });
        }
        let mut pairs = Vec::with_capacity(src.len());
        for (i, (s, t)) in src.iter().zip(&tgt).enumerate() {
            let source = tokenize(s);
            let target = tokenize(&t.to_lowercase());
            if source.is_empty() {
                return Err(CorpusError::EmptySentence {
                    line: i + 1,
                    side: Side::Source,
                });
            }
            if target.is_empty() {
                return Err(CorpusError::EmptySentence {
                    line: i + 1,
                    side: Side::Target,
                });
            }
            pairs.push(SentencePair { id: i, source, target });
        }
        let mut corpus = ParallelCorpus::default();
        corpus.insert_split(split, pairs);
        Ok(corpus)
    }

    /// Writes `<split>.gloss` / `<split>.txt` for every split into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for (split, pairs) in self.splits() {
            for side in [Side::Source, Side::Target] {
                let path = split_path(dir, split, side);
                let mut text = String::new();
                for p in pairs {
                    text.push_str(&p.side(side).join(" "));
                    text.push('\n');
                }
                fs::write(&path, text).map_err(|e| io_err(&path, e))?;
            }
        }
        Ok(())
    }
}

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_owned).collect()
}

pub fn split_path(dir: &Path, split: Split, side: Side) -> PathBuf {
    let suffix = match side {
        Side::Source => SOURCE_SUFFIX,
        Side::Target => TARGET_SUFFIX,
    };
    dir.join(format!("{}.{}", split.name(), suffix))
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_text(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Loads one split from a gloss file and its aligned text file. Glosses keep
/// their case; the text side is lowercased.
pub fn load_parallel(source_path: &Path, target_path: &Path, split: Split) -> Result<ParallelCorpus, CorpusError> {
    let source = read_text(source_path)?;
    let target = read_text(target_path)?;
    ParallelCorpus::from_texts(&source, &target, split)
        .map_err(|e| match e {
            CorpusError::EmptyCorpus(_) => CorpusError::EmptyCorpus(source_path.display().to_string()),
            other => other,
        })
}

/// Loads every split whose files exist under `dir`.
pub fn load_dir(dir: &Path) -> Result<ParallelCorpus, CorpusError> {
    let mut corpus = ParallelCorpus::default();
    for split in Split::ALL {
        let src = split_path(dir, split, Side::Source);
        let tgt = split_path(dir, split, Side::Target);
        if !src.exists() && !tgt.exists() {
            continue;
        }
        corpus.merge(load_parallel(&src, &tgt, split)?);
    }
    if corpus.splits.is_empty() {
        return Err(CorpusError::EmptyCorpus(dir.display().to_string()));
    }
    Ok(corpus)
}

/// Removes at most one prefix from each token, trying longer prefixes first.
/// A token that would become empty is left unchanged.
pub fn strip_asl_prefixes<S: AsRef<str>>(sentence: &[String], prefixes: &[S]) -> Vec<String> {
    let mut ordered: Vec<&str> = prefixes.iter().map(AsRef::as_ref).collect();
    ordered.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    sentence
        .iter()
        .map(|tok| {
            ordered
                .iter()
                .find(|p| tok.len() > p.len() && tok.starts_with(*p))
                .map_or_else(|| tok.clone(), |p| tok[p.len()..].to_owned())
        })
        .collect()
}

/// Applies [`strip_asl_prefixes`] to the source side of every split.
pub fn strip_corpus_prefixes<S: AsRef<str>>(corpus: &ParallelCorpus, prefixes: &[S]) -> ParallelCorpus {
    let mut out = corpus.clone();
    for pairs in out.splits.values_mut() {
        for p in pairs {
            p.source = strip_asl_prefixes(&p.source, prefixes);
        }
    }
    out
}

pub(crate) fn train_counts(corpus: &ParallelCorpus, side: Side) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    for p in corpus.pairs(Split::Train) {
        for tok in p.side(side) {
            *counts.entry(tok.clone()).or_insert(0) += 1;
        }
    }
    counts
}

/// Replaces tokens seen fewer than `threshold` times in train with `<unk>`,
/// on one side, in every split.
pub fn apply_min_freq_threshold(corpus: &ParallelCorpus, side: Side, threshold: u64) -> Result<ParallelCorpus, CorpusError> {
    if threshold == 0 {
        return Err(CorpusError::Config("frequency threshold must be at least 1".into()));
    }
    if !corpus.has_split(Split::Train) {
        return Err(CorpusError::Config("frequency threshold needs a train split".into()));
    }
    let counts = train_counts(corpus, side);
    let mut out = corpus.clone();
    for pairs in out.splits.values_mut() {
        for p in pairs {
            for tok in p.side_mut(side) {
                if tok != UNK && counts.get(tok.as_str()).copied().unwrap_or(0) < threshold {
                    *tok = UNK.to_owned();
                }
            }
        }
    }
    Ok(out)
}

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, train_counts, CorpusError, ParallelCorpus, Side};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const EOS_ID: usize = 3;

const SPECIALS: [&str; 4] = [PAD, UNK, BOS, EOS];

/// Token/id maps with train frequencies. The four specials occupy ids 0..4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from token counts, keeping tokens seen at least
    /// `min_freq` times, ordered by descending count then lexicographically.
    pub fn from_counts(counts: &HashMap<String, u64>, min_freq: u64) -> Self {
        let mut entries: Vec<(&String, u64)> = counts
            .iter()
            .filter(|(tok, &n)| n >= min_freq && !SPECIALS.contains(&tok.as_str()))
            .map(|(t, &n)| (t, n))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut freqs = vec![0; SPECIALS.len()];
        for (t, n) in entries {
            tokens.push(t.clone());
            freqs.push(n);
        }
        Self::from_parts(tokens, freqs)
    }

    fn from_parts(tokens: Vec<String>, freqs: Vec<u64>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, freqs, index }
    }

    /// Rebuilds a vocabulary from its token list in id order (specials first).
    pub fn from_tokens(tokens: Vec<String>, freqs: Vec<u64>) -> Result<Self, CorpusError> {
        if tokens.len() < SPECIALS.len()
            || tokens.iter().zip(SPECIALS).any(|(t, s)| t != s)
            || tokens.len() != freqs.len()
        {
            return Err(CorpusError::Config("vocabulary must start with the four special tokens".into()));
        }
        let v = Self::from_parts(tokens, freqs);
        if v.index.len() != v.tokens.len() {
            return Err(CorpusError::Config("vocabulary contains duplicate tokens".into()));
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Entries excluding the four specials.
    pub fn num_regular(&self) -> usize {
        self.tokens.len() - SPECIALS.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn frequency(&self, id: usize) -> u64 {
        self.freqs.get(id).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.freqs
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    /// One `token<TAB>frequency` line per entry in id order.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (t, n) in self.tokens.iter().zip(&self.freqs) {
            let _ = writeln!(out, "{t}\t{n}");
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, CorpusError> {
        let mut tokens = Vec::new();
        let mut freqs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let bad = || CorpusError::VocabFormat {
                path: origin.to_owned(),
                line: i + 1,
            };
            let (tok, n) = line.split_once('\t').ok_or_else(bad)?;
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(bad());
            }
            tokens.push(tok.to_owned());
            freqs.push(n.parse().map_err(|_| bad())?);
        }
        Self::from_tokens(tokens, freqs)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_file_string()).map_err(|e| CorpusError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::parse(&read_text(path)?, &path.display().to_string())
    }
}

/// Vocabulary over the train split of one side.
pub fn build_vocab(corpus: &ParallelCorpus, side: Side) -> Vocabulary {
    Vocabulary::from_counts(&train_counts(corpus, side), 1)
}

/// Maps tokens to ids, unknown tokens to `<unk>`, optionally framed by `<s>`/`</s>`.
pub fn encode<S: AsRef<str>>(sentence: &[S], vocab: &Vocabulary, add_bos_eos: bool) -> Vec<usize> {
    let mut ids = Vec::with_capacity(sentence.len() + 2);
    if add_bos_eos {
        ids.push(BOS_ID);
    }
    ids.extend(sentence.iter().map(|t| vocab.id(t.as_ref()).unwrap_or(UNK_ID)));
    if add_bos_eos {
        ids.push(EOS_ID);
    }
    ids
}

/// Maps ids back to tokens, dropping `<pad>`, `<s>` and `</s>` framing.
pub fn decode(ids: &[usize], vocab: &Vocabulary) -> Vec<String> {
    ids.iter()
        .filter(|&&id| id != PAD_ID && id != BOS_ID && id != EOS_ID)
        .map(|&id| vocab.token(id).unwrap_or(UNK).to_owned())
        .collect()
}

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::Serialize;

use super::{train_counts, ParallelCorpus, Side, Split};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SplitStats {
    pub phrases: usize,
    /// Distinct token types in this split.
    pub vocab: usize,
    pub total_words: usize,
    /// Distinct types absent from the train vocabulary (dev/test only).
    pub oovs: Option<usize>,
    /// Train types occurring exactly once (train only).
    pub singletons: Option<usize>,
}

/// Per-split statistics for one side of a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub side: Option<Side>,
    pub splits: BTreeMap<Split, SplitStats>,
}

impl CorpusStats {
    pub fn get(&self, split: Split) -> SplitStats {
        self.splits.get(&split).cloned().unwrap_or_default()
    }

    /// Renders the table with one column per split and one row per statistic.
    pub fn to_table(&self) -> String {
        let cols: Vec<SplitStats> = Split::ALL.iter().map(|&s| self.get(s)).collect();
        let opt = |v: Option<usize>| v.map_or_else(|| "–".to_owned(), group_thousands);
        let rows: [(&str, Vec<String>); 5] = [
            ("Phrases", cols.iter().map(|c| group_thousands(c.phrases)).collect()),
            ("Vocab.", cols.iter().map(|c| group_thousands(c.vocab)).collect()),
            ("tot. words", cols.iter().map(|c| group_thousands(c.total_words)).collect()),
            ("tot. OOVs", cols.iter().map(|c| opt(c.oovs)).collect()),
            ("singletons", cols.iter().map(|c| opt(c.singletons)).collect()),
        ];
        let mut out = String::new();
        let _ = writeln!(out, "{:<12}{:>10}{:>10}{:>10}", "", "Train", "Dev", "Test");
        for (label, vals) in rows {
            let _ = write!(out, "{label:<12}");
            for v in vals {
                let _ = write!(out, "{v:>10}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

pub fn corpus_statistics(corpus: &ParallelCorpus, side: Side) -> CorpusStats {
    let counts = train_counts(corpus, side);
    let mut splits = BTreeMap::new();
    for split in Split::ALL {
        let pairs = corpus.pairs(split);
        let types: HashSet<&str> = pairs
            .iter()
            .flat_map(|p| p.side(side).iter().map(String::as_str))
            .collect();
        let total_words = pairs.iter().map(|p| p.side(side).len()).sum();
        let (oovs, singletons) = match split {
            Split::Train => (None, Some(counts.values().filter(|&&n| n == 1).count())),
            _ => (
                Some(types.iter().filter(|t| !counts.contains_key(**t)).count()),
                None,
            ),
        };
        splits.insert(
            split,
            SplitStats {
                phrases: pairs.len(),
                vocab: types.len(),
                total_words,
                oovs,
                singletons,
            },
        );
    }
    CorpusStats {
        side: Some(side),
        splits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn fixture() -> ParallelCorpus {
        let mut c = ParallelCorpus::from_texts("A B A\nC D\n", "x y\nz\n", Split::Train).unwrap();
        c.merge(ParallelCorpus::from_texts("A E F\n", "x q\n", Split::Dev).unwrap());
        c.merge(ParallelCorpus::from_texts("G\n", "w\n", Split::Test).unwrap());
        c
    }

    #[test]
    fn hand_counted_fixture() {
        let s = corpus_statistics(&fixture(), Side::Source);
        let train = s.get(Split::Train);
        assert_eq!(train.phrases, 2);
        assert_eq!(train.vocab, 4);
        assert_eq!(train.total_words, 5);
        assert_eq!(train.singletons, Some(3));
        assert_eq!(train.oovs, None);
        assert_eq!(s.get(Split::Dev).oovs, Some(2));
        assert_eq!(s.get(Split::Test).oovs, Some(1));
        let t = corpus_statistics(&fixture(), Side::Target);
        assert_eq!(t.get(Split::Dev).oovs, Some(1));
    }

    #[test]
    fn empty_corpus_gives_zeros() {
        let s = corpus_statistics(&ParallelCorpus::default(), Side::Source);
        for split in Split::ALL {
            let st = s.get(split);
            assert_eq!((st.phrases, st.vocab, st.total_words), (0, 0, 0));
            assert_eq!(st.oovs.unwrap_or(0) + st.singletons.unwrap_or(0), 0);
        }
    }

    #[test]
    fn table_layout() {
        let table = corpus_statistics(&fixture(), Side::Source).to_table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].contains("Train") && lines[0].contains("Dev") && lines[0].contains("Test"));
        assert!(lines[4].starts_with("tot. OOVs"));
        assert!(lines[5].starts_with("singletons"));
        assert_eq!(group_thousands(99081), "99,081");
        assert_eq!(group_thousands(7096), "7,096");
        assert_eq!(group_thousands(642), "642");
    }

    #[test]
    fn singletons_match_brute_force_recount() {
        let mut rng = crate::numerics::SeededRng::new(11);
        for _ in 0..50 {
            let words = ["a", "b", "c", "d", "e", "f", "g", "h"];
            let mut raw = String::new();
            for _ in 0..(1 + rng.below(10)) {
                let n = 1 + rng.below(6);
                let line: Vec<&str> = (0..n).map(|_| words[rng.below(words.len())]).collect();
                raw.push_str(&line.join(" "));
                raw.push('\n');
            }
            let c = ParallelCorpus::from_texts(&raw, &raw.to_lowercase(), Split::Train).unwrap();
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for tok in raw.split_whitespace() {
                *counts.entry(tok).or_default() += 1;
            }
            let brute = counts.values().filter(|&&n| n == 1).count();
            let s = corpus_statistics(&c, Side::Source);
            assert_eq!(s.get(Split::Train).singletons, Some(brute));
            assert!(brute <= s.get(Split::Train).vocab);
        }
    }
}

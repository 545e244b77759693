//! Rule-based weather-forecast corpus: gloss sequences with German-like
//! target sentences that reorder and expand them. Used for smoke runs and
//! memorization checks when no licensed data is around.

use crate::numerics::SeededRng;

use super::{tokenize, ParallelCorpus, SentencePair, Split};

const TIMES: &[(&str, &str)] = &[
    ("MORGEN", "morgen"),
    ("HEUTE", "heute"),
    ("ABEND", "abends"),
    ("NACHT", "nachts"),
    ("SONNTAG", "sonntag"),
];

const REGIONS: &[(&str, &str)] = &[
    ("NORD", "im norden"),
    ("SUED", "im süden"),
    ("WEST", "im westen"),
    ("OST", "im osten"),
    ("BERG", "im bergland"),
    ("KUESTE", "im küstenbereich"),
    ("MITTE", "im zentrum"),
];

const WEATHER: &[(&str, &str)] = &[
    ("REGEN", "regnet es"),
    ("SONNE", "scheint die sonne"),
    ("SCHNEE", "schneit es"),
    ("WOLKE", "ist es bewölkt"),
    ("GEWITTER", "gibt es gewitter"),
    ("NEBEL", "gibt es nebel"),
    ("WIND", "weht der wind"),
];

const DEGREES: &[(&str, &str)] = &[
    ("MINUS-FUENF", "minus fünf"),
    ("NULL", "null"),
    ("FUENF", "fünf"),
    ("ZEHN", "zehn"),
    ("FUENFZEHN", "fünfzehn"),
    ("ZWANZIG", "zwanzig"),
    ("DREISSIG", "dreißig"),
];

const INTENSITY: &[(&str, &str)] = &[("STARK", "kräftig"), ("LEICHT", "leicht"), ("VIEL", "häufig")];

fn pick<'a>(rng: &mut SeededRng, table: &'a [(&'a str, &'a str)]) -> (&'a str, &'a str) {
    table[rng.below(table.len())]
}

fn clause(rng: &mut SeededRng) -> (String, String) {
    match rng.below(4) {
        0 => {
            let (tg, tt) = pick(rng, TIMES);
            let (rg, rt) = pick(rng, REGIONS);
            let (wg, wt) = pick(rng, WEATHER);
            (format!("{tg} {rg} {wg}"), format!("{tt} {wt} {rt}"))
        }
        1 => {
            let (rg, rt) = pick(rng, REGIONS);
            let (wg, wt) = pick(rng, WEATHER);
            let (ig, it) = pick(rng, INTENSITY);
            (format!("{rg} {wg} {ig}"), format!("{rt} {wt} {it}"))
        }
        2 => {
            let (dg, dt) = pick(rng, DEGREES);
            let (rg, rt) = pick(rng, REGIONS);
            (format!("TEMPERATUR {dg} {rg}"), format!("{rt} bis {dt} grad"))
        }
        _ => {
            let (tg, tt) = pick(rng, TIMES);
            let (wg, wt) = pick(rng, WEATHER);
            (format!("{tg} {wg} UEBERALL"), format!("{tt} {wt} überall"))
        }
    }
}

/// One gloss line and its translation.
pub fn synthetic_pair(rng: &mut SeededRng) -> (String, String) {
    let (mut gloss, mut text) = clause(rng);
    if rng.below(3) == 0 {
        let (g2, t2) = clause(rng);
        gloss = format!("{gloss} {g2}");
        text = format!("{text} und {t2}");
    }
    (gloss, text)
}

/// `pairs` sentence pairs split 80/10/10 into train, dev and test.
pub fn synthetic_corpus(pairs: usize, seed: u64) -> ParallelCorpus {
    let mut rng = SeededRng::derive(seed, 0x5359_4e54);
    let all: Vec<(String, String)> = (0..pairs).map(|_| synthetic_pair(&mut rng)).collect();
    let dev = pairs / 10;
    let test = pairs / 10;
    let train = pairs - dev - test;
    let mut corpus = ParallelCorpus::new("gloss", "de");
    let mut start = 0;
    for (split, n) in [(Split::Train, train), (Split::Dev, dev), (Split::Test, test)] {
        let chunk = all[start..start + n]
            .iter()
            .enumerate()
            .map(|(i, (g, t))| SentencePair {
                id: i,
                source: tokenize(g),
                target: tokenize(t),
            })
            .collect();
        corpus.insert_split(split, chunk);
        start += n;
    }
    corpus
}

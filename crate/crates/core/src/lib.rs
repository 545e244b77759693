//! Gloss-to-text translation engine.
//!
//! Corpus preprocessing, a small encoder-decoder Transformer trained from
//! scratch on a hand-rolled autograd, greedy/beam/ensemble decoding, and the
//! BLEU, ROUGE-L and METEOR metrics used to score translations.

pub mod numerics;
pub mod corpus;
pub mod transformer;
pub mod metrics;
pub mod decoding;
pub mod training;

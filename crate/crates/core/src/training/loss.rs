use crate::corpus::{BOS_ID, EOS_ID, PAD_ID};
use crate::numerics::{Gradients, Graph, Real, Var};
use crate::transformer::{Mode, TransformerModel};

use super::TrainError;

/// One encoded sentence pair. Targets carry neither `<s>` nor `</s>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl Example {
    pub fn new(source: Vec<usize>, target: Vec<usize>) -> Self {
        Example { source, target }
    }

    /// Decoder input: `<s> y1 .. yn`.
    pub fn decoder_input(&self) -> Vec<usize> {
        std::iter::once(BOS_ID).chain(self.target.iter().copied()).collect()
    }

    /// Decoder output: `y1 .. yn </s>`.
    pub fn decoder_output(&self) -> Vec<usize> {
        self.target.iter().copied().chain(std::iter::once(EOS_ID)).collect()
    }
}

/// Mean label-smoothed cross-entropy over every target token in `batch`.
pub fn batch_loss<'p, T: Real>(
    model: &'p TransformerModel<T>,
    g: &mut Graph<'p, T>,
    batch: &[&Example],
    label_smoothing: f64,
    mode: &mut Mode,
) -> Result<Var, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Contract("empty batch".into()));
    }
    let mut logits = Vec::with_capacity(batch.len());
    let mut targets = Vec::new();
    for ex in batch {
        logits.push(model.forward_pair(g, &ex.source, &ex.decoder_input(), mode)?);
        targets.extend(ex.decoder_output());
    }
    let all = g.concat_rows(&logits)?;
    Ok(g.cross_entropy(all, &targets, label_smoothing, Some(PAD_ID))?)
}

/// Loss value and parameter gradients for one batch.
pub fn loss_and_gradients<T: Real>(
    model: &TransformerModel<T>,
    batch: &[&Example],
    label_smoothing: f64,
    mode: &mut Mode,
) -> Result<(f64, Gradients<T>), TrainError> {
    let mut g = Graph::with_params(model.params());
    let loss = batch_loss(model, &mut g, batch, label_smoothing, mode)?;
    let value = g.value(loss).item().to_f64_lossy();
    Ok((value, g.backward(loss)?))
}

/// Token-weighted mean loss over `examples` at inference.
pub fn evaluate_loss<T: Real>(
    model: &TransformerModel<T>,
    examples: &[Example],
    label_smoothing: f64,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for ex in examples {
        let mut g = Graph::with_params(model.params());
        let loss = batch_loss(model, &mut g, &[ex], label_smoothing, &mut Mode::Inference)?;
        let n = ex.target.len() + 1;
        total += g.value(loss).item().to_f64_lossy() * n as f64;
        tokens += n;
    }
    Ok(if tokens == 0 { 0.0 } else { total / tokens as f64 })
}

/// Fraction of teacher-forced target tokens (including `</s>`) whose argmax
/// prediction is correct.
pub fn token_accuracy<T: Real>(model: &TransformerModel<T>, examples: &[Example]) -> Result<f64, TrainError> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for ex in examples {
        let memory = model.encode_source(&ex.source)?;
        let logits = model.decode_all(&memory, &ex.decoder_input())?;
        for (r, &gold) in ex.decoder_output().iter().enumerate() {
            let row = logits.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            correct += usize::from(best == gold);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

use serde::{Deserialize, Serialize};

use crate::numerics::SeededRng;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchUnit {
    /// Budget counts padded target tokens.
    Tokens,
    /// Budget counts sentences.
    Sentences,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    /// Sentences × longest target in the batch.
    pub padded_tokens: usize,
}

/// Groups sentences of similar target length into batches. Ordering within
/// a length and the order of batches depend on `(seed, epoch)` only.
pub fn make_batches(
    target_lengths: &[usize],
    budget: usize,
    unit: BatchUnit,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Batch>, TrainError> {
    if budget == 0 {
        return Err(TrainError::Config("batch size must be positive".into()));
    }
    if unit == BatchUnit::Tokens {
        if let Some((i, &len)) = target_lengths.iter().enumerate().find(|(_, &l)| l > budget) {
            return Err(TrainError::Contract(format!(
                "sentence {i} has {len} target tokens, more than the batch budget of {budget}"
            )));
        }
    }
    let mut rng = SeededRng::derive(seed, 0x6261_7463_6800_0000 ^ epoch);
    let mut order: Vec<usize> = (0..target_lengths.len()).collect();
    rng.shuffle(&mut order);
    order.sort_by_key(|&i| target_lengths[i]);

    let mut batches = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut longest = 0;
    for i in order {
        let len = target_lengths[i];
        let fits = match unit {
            BatchUnit::Tokens => (current.len() + 1) * longest.max(len) <= budget,
            BatchUnit::Sentences => current.len() < budget,
        };
        if !fits && !current.is_empty() {
            batches.push(Batch {
                padded_tokens: current.len() * longest,
                indices: std::mem::take(&mut current),
            });
            longest = 0;
        }
        current.push(i);
        longest = longest.max(len);
    }
    if !current.is_empty() {
        batches.push(Batch {
            padded_tokens: current.len() * longest,
            indices: current,
        });
    }
    rng.shuffle(&mut batches);
    Ok(batches)
}

//! Label-smoothed maximum-likelihood training with Adam, the Noam schedule,
//! token batching, half-epoch dev evaluation and early stopping.

mod adam;
mod batching;
mod loss;
mod runs;
mod schedule;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoding::DecodeError;
use crate::numerics::NumericsError;
use crate::transformer::TransformerError;

pub use adam::{AdamConfig, OptimizerState};
pub use batching::{make_batches, Batch, BatchUnit};
pub use loss::{batch_loss, evaluate_loss, loss_and_gradients, token_accuracy, Example};
pub use runs::{aggregate, multi_seed_run, MultiSeedReport, SeedResult};
pub use schedule::noam_lr;
pub use trainer::{
    train, train_with_observer, EarlyStopping, EvalRecord, StopDecision, StopReason, TrainData, TrainLog,
    TrainOutcome,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Model(#[from] TransformerError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub batch_unit: BatchUnit,
    pub label_smoothing: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub patience: usize,
    pub max_epochs: usize,
    /// Optional hard cap on optimizer steps.
    pub max_steps: Option<u64>,
    /// Seeds batching order and dropout. Not serialized: run configurations
    /// carry their own seed lists.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 0.5,
            warmup_steps: 3000,
            batch_size: 2048,
            batch_unit: BatchUnit::Tokens,
            label_smoothing: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.998,
            adam_eps: 1e-8,
            patience: 5,
            max_epochs: 100,
            max_steps: None,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.into()));
        if self.warmup_steps == 0 {
            return fail("warmup_steps must be at least 1");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return fail("label_smoothing must lie in [0, 1)");
        }
        if !(self.initial_lr > 0.0) {
            return fail("initial_lr must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("Adam betas must lie in [0, 1)");
        }
        Ok(())
    }
}

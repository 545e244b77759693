use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{decode, encode, ParallelCorpus, Split, Vocabulary};
use crate::decoding::{greedy_decode, DecodeConfig, Ensemble};
use crate::metrics::bleu;
use crate::numerics::{Real, SeededRng};
use crate::transformer::{Checkpoint, Mode, TransformerModel};

use super::{evaluate_loss, loss_and_gradients, make_batches, noam_lr, Example, OptimizerState, TrainConfig, TrainError};

/// Encoded training and dev sentences with the vocabularies used to encode them.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    /// Dev target sentences as plain tokens, for BLEU.
    pub dev_references: Vec<Vec<String>>,
    pub source_vocab: Vocabulary,
    pub target_vocab: Vocabulary,
}

impl TrainData {
    pub fn from_corpus(
        corpus: &ParallelCorpus,
        source_vocab: Vocabulary,
        target_vocab: Vocabulary,
    ) -> Result<Self, TrainError> {
        let enc = |split: Split| -> Vec<Example> {
            corpus
                .pairs(split)
                .iter()
                .map(|p| Example::new(encode(&p.source, &source_vocab, false), encode(&p.target, &target_vocab, false)))
                .collect()
        };
        let (train, dev) = (enc(Split::Train), enc(Split::Dev));
        if train.is_empty() {
            return Err(TrainError::Config("training split is empty".into()));
        }
        Ok(TrainData {
            train,
            dev,
            dev_references: corpus.pairs(Split::Dev).iter().map(|p| p.target.clone()).collect(),
            source_vocab,
            target_vocab,
        })
    }
}

/// One dev evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub epoch: f64,
    pub lr: f64,
    /// Mean training batch loss since the previous evaluation.
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_bleu4: f64,
    pub improved: bool,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    MaxSteps,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EvalRecord>,
    /// Index into `records` of the selected checkpoint.
    pub best: Option<usize>,
    pub stop_reason: Option<StopReason>,
    /// Mean training batch loss of every completed epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainLog {
    pub fn best_record(&self) -> Option<&EvalRecord> {
        self.best.map(|i| &self.records[i])
    }

    /// One JSON object per evaluation, in step order.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based stopping on dev BLEU-4, with lower dev loss breaking ties.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(f64, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn update(&mut self, bleu4: f64, dev_loss: f64) -> StopDecision {
        let better = match self.best {
            None => true,
            Some((b, l)) => bleu4 > b || (bleu4 == b && dev_loss < l),
        };
        if better {
            self.best = Some((bleu4, dev_loss));
            self.since_best = 0;
            StopDecision::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn evaluations_since_best(&self) -> usize {
        self.since_best
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub best: TransformerModel<T>,
    pub log: TrainLog,
    pub checkpoints: Vec<PathBuf>,
}

fn io_err(path: &Path, e: impl ToString) -> TrainError {
    TrainError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Dev loss (no smoothing) and greedy BLEU-4.
fn dev_scores<T: Real>(model: &TransformerModel<T>, data: &TrainData) -> Result<(f64, f64), TrainError> {
    let loss = evaluate_loss(model, &data.dev, 0.0)?;
    let ens = Ensemble::single(model);
    let cfg = DecodeConfig {
        beam_width: 1,
        replace_unk: false,
        ..Default::default()
    };
    let hyps = data
        .dev
        .iter()
        .map(|ex| Ok(decode(greedy_decode(&ens, &ex.source, &cfg)?.output_ids(), &data.target_vocab)))
        .collect::<Result<Vec<_>, TrainError>>()?;
    Ok((loss, bleu(&hyps, &data.dev_references, 4).map_err(|e| TrainError::Contract(e.to_string()))?.score))
}

pub fn train<T: Real>(
    model: TransformerModel<T>,
    data: &TrainData,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<T>, TrainError> {
    train_with_observer(model, data, config, out_dir, |_| {})
}

/// Trains until early stopping or a cap, calling `observer` after each dev
/// evaluation. With `out_dir`, every improvement is checkpointed there and
/// the log is kept up to date in `train_log.jsonl`.
pub fn train_with_observer<T: Real>(
    mut model: TransformerModel<T>,
    data: &TrainData,
    config: &TrainConfig,
    out_dir: Option<&Path>,
    mut observer: impl FnMut(&EvalRecord),
) -> Result<TrainOutcome<T>, TrainError> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::Config("training split is empty".into()));
    }
    if data.dev.is_empty() {
        return Err(TrainError::Config("dev split is empty".into()));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let lengths: Vec<usize> = data.train.iter().map(|e| e.target.len()).collect();
    let adam = config.adam();
    let d_model = model.config().d_model;
    let mut optimizer = OptimizerState::new(model.params());
    let mut dropout_rng = SeededRng::derive(config.seed, 1);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut log = TrainLog::default();
    let mut best_model: Option<TransformerModel<T>> = None;
    let mut checkpoints = Vec::new();
    let mut step = 0u64;
    let (mut pending_loss, mut pending_batches) = (0.0, 0usize);

    'epochs: for epoch in 0..config.max_epochs {
        let batches = make_batches(&lengths, config.batch_size, config.batch_unit, config.seed, epoch as u64)?;
        let n = batches.len();
        let half = n.div_ceil(2);
        let mut epoch_loss = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            step += 1;
            let lr = noam_lr(step, config.initial_lr, d_model, config.warmup_steps);
            let examples: Vec<&Example> = batch.indices.iter().map(|&i| &data.train[i]).collect();
            let (loss, grads) =
                loss_and_gradients(&model, &examples, config.label_smoothing, &mut Mode::Train(&mut dropout_rng))?;
            model.params_mut().zero_grad();
            model.params_mut().accumulate(&grads);
            optimizer.adam_step(model.params_mut(), lr, &adam)?;
            epoch_loss += loss;
            pending_loss += loss;
            pending_batches += 1;

            let capped = config.max_steps.is_some_and(|m| step >= m);
            if b + 1 == half || b + 1 == n || capped {
                let (dev_loss, dev_bleu4) = dev_scores(&model, data)?;
                let decision = stopper.update(dev_bleu4, dev_loss);
                let mut record = EvalRecord {
                    step,
                    epoch: epoch as f64 + (b + 1) as f64 / n as f64,
                    lr,
                    train_loss: pending_loss / pending_batches as f64,
                    dev_loss,
                    dev_bleu4,
                    improved: decision == StopDecision::Improved,
                    checkpoint: None,
                };
                pending_loss = 0.0;
                pending_batches = 0;
                if decision == StopDecision::Improved {
                    if let Some(dir) = out_dir {
                        let path = dir.join(format!("ckpt_step{step:07}_bleu{dev_bleu4:.2}.bin"));
                        Checkpoint {
                            model: model.clone(),
                            source_vocab: data.source_vocab.clone(),
                            target_vocab: data.target_vocab.clone(),
                        }
                        .save(&path)?;
                        record.checkpoint = Some(path.file_name().expect("file").to_string_lossy().into_owned());
                        checkpoints.push(path);
                    }
                    best_model = Some(model.clone());
                    log.best = Some(log.records.len());
                }
                observer(&record);
                log.records.push(record);
                if let Some(dir) = out_dir {
                    let path = dir.join("train_log.jsonl");
                    fs::write(&path, log.to_jsonl()).map_err(|e| io_err(&path, e))?;
                }
                if decision == StopDecision::Stop {
                    log.stop_reason = Some(StopReason::Patience);
                    break 'epochs;
                }
            }
            if capped {
                log.stop_reason = Some(StopReason::MaxSteps);
                break 'epochs;
            }
        }
        log.epoch_losses.push(epoch_loss / n as f64);
    }
    if log.stop_reason.is_none() {
        log.stop_reason = Some(StopReason::MaxEpochs);
    }
    Ok(TrainOutcome {
        best: best_model.unwrap_or(model),
        log,
        checkpoints,
    })
}

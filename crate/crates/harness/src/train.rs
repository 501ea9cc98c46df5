//! Seeded minibatch SGD over the combined loss.

use std::time::Instant;

use qrcl_core::objectives::{combined_loss, QuantileLossSpec};
use qrcl_core::optim::Sgd;
use qrcl_core::{Tape64, Var};
use qrcl_data::{split_indices, SequenceSample};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dataset::{self, Dataset};
use crate::error::{HarnessError, Result};
use crate::evaluate::{evaluate, Evaluation};
use crate::model::Model;

const VALIDATION_SALT: u64 = 0x5641_4c49_4441_5445;

/// Early-stopping bookkeeping carried across epochs and checkpoints.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub best: Option<f64>,
    pub stale_epochs: usize,
    pub stopped: bool,
}

/// Everything needed to continue training at an epoch boundary.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub optimizer: Sgd<f64>,
    pub epochs_completed: usize,
    pub loss_trace: Vec<f64>,
    pub val_trace: Vec<f64>,
    pub early: EarlyStop,
    pub training_time_s: f64,
}

impl TrainState {
    pub fn new(cfg: &ExperimentConfig, model: Model) -> Self {
        TrainState {
            model,
            optimizer: Sgd::new(cfg.train.lr, cfg.train.momentum),
            epochs_completed: 0,
            loss_trace: Vec::new(),
            val_trace: Vec::new(),
            early: EarlyStop::default(),
            training_time_s: 0.0,
        }
    }

    pub fn fresh(cfg: &ExperimentConfig, data: &Dataset) -> Result<Self> {
        Ok(Self::new(cfg, Model::new(&cfg.model, data.input, cfg.seed)?))
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Training rows and, when early stopping is on, the held-out rows carved
/// from them.
pub fn fit_and_validation(cfg: &ExperimentConfig, train: &[SequenceSample]) -> Result<(Vec<SequenceSample>, Vec<SequenceSample>)> {
    if cfg.train.patience == 0 {
        return Ok((train.to_vec(), Vec::new()));
    }
    let labels: Vec<u8> = train.iter().map(|s| s.y).collect();
    let (fit, val) = split_indices(&labels, 1.0 - cfg.train.val_frac, cfg.seed ^ VALIDATION_SALT)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| train[i].clone()).collect::<Vec<_>>();
    Ok((pick(&fit), pick(&val)))
}

fn sample_loss(model: &Model, tape: &mut Tape64, bound: &qrcl_core::Bound, s: &SequenceSample, lambda: f64, spec: &QuantileLossSpec) -> Result<Var> {
    let x = tape.constant(s.x.clone());
    let f = model.forward(tape, bound, x)?;
    Ok(combined_loss(tape, f.raw, f64::from(s.y), lambda, spec)?)
}

/// Mean combined loss over `samples` with frozen parameters.
pub fn mean_loss(model: &Model, samples: &[SequenceSample], lambda: f64) -> Result<f64> {
    let spec = QuantileLossSpec::new(model.config.taus.clone())?;
    let mut total = 0.0;
    for s in samples {
        let mut tape = Tape64::new();
        let bound = model.store.bind_frozen(&mut tape);
        let l = sample_loss(model, &mut tape, &bound, s, lambda, &spec)?;
        total += tape.value(l).data()[0];
    }
    Ok(total / samples.len() as f64)
}

/// One pass over `samples` in the epoch's shuffled order. Returns the mean
/// per-sample loss measured before each batch update.
fn run_epoch(cfg: &ExperimentConfig, state: &mut TrainState, samples: &[SequenceSample], spec: &QuantileLossSpec) -> Result<f64> {
    let epoch = state.epochs_completed + 1;
    let diverged = || HarnessError::Divergence {
        epoch,
        last_good: (epoch > 1).then_some(epoch - 1),
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, state.epochs_completed)));
    let mut total = 0.0;
    for batch in order.chunks(cfg.train.batch) {
        let mut tape = Tape64::new();
        let bound = state.model.store.bind(&mut tape);
        let mut sum: Option<Var> = None;
        for &i in batch {
            let l = sample_loss(&state.model, &mut tape, &bound, &samples[i], cfg.train.lambda, spec)?;
            sum = Some(match sum {
                None => l,
                Some(acc) => tape.add(acc, l)?,
            });
        }
        let sum = sum.expect("chunks are non-empty");
        let batch_total = tape.value(sum).data()[0];
        if !batch_total.is_finite() {
            return Err(diverged());
        }
        total += batch_total;
        let loss = tape.scale(sum, 1.0 / batch.len() as f64);
        let grads = tape.backward(loss)?;
        state.optimizer.step(&mut state.model.store, &bound.gradients(&grads))?;
        if state.model.store.iter().any(|(_, t)| t.data().iter().any(|v| !v.is_finite())) {
            return Err(diverged());
        }
    }
    Ok(total / samples.len() as f64)
}

/// Trains until `cfg.train.epochs` epochs are complete or early stopping
/// fires, calling `on_epoch` after every epoch.
pub fn train_epochs(
    cfg: &ExperimentConfig,
    state: &mut TrainState,
    train: &[SequenceSample],
    mut on_epoch: impl FnMut(&TrainState) -> Result<()>,
) -> Result<()> {
    if train.is_empty() {
        return Err(HarnessError::Config("train: no training samples".into()));
    }
    let spec = QuantileLossSpec::new(state.model.config.taus.clone())?;
    let (fit, val) = fit_and_validation(cfg, train)?;
    while state.epochs_completed < cfg.train.epochs && !state.early.stopped {
        let start = Instant::now();
        let loss = run_epoch(cfg, state, &fit, &spec)?;
        state.training_time_s += start.elapsed().as_secs_f64();
        state.loss_trace.push(loss);
        state.epochs_completed += 1;
        log::info!("epoch {} loss {loss:.6}", state.epochs_completed);
        if !val.is_empty() {
            let v = mean_loss(&state.model, &val, cfg.train.lambda)?;
            state.val_trace.push(v);
            if state.early.best.is_none_or(|b| v < b) {
                state.early.best = Some(v);
                state.early.stale_epochs = 0;
            } else {
                state.early.stale_epochs += 1;
                if state.early.stale_epochs >= cfg.train.patience {
                    log::info!("early stop after epoch {}", state.epochs_completed);
                    state.early.stopped = true;
                }
            }
        }
        on_epoch(state)?;
    }
    Ok(())
}

/// Test-split evaluation with the training fields filled from `state`.
pub fn final_report(cfg: &ExperimentConfig, state: &TrainState, data: &Dataset) -> Result<Evaluation> {
    let mut eval = evaluate(&state.model, &data.test, cfg.threshold)?;
    eval.report.training_time_s = state.training_time_s;
    eval.report.loss_trace = state.loss_trace.clone();
    if state.early.stopped {
        eval.report
            .notes
            .push(format!("early stopping after epoch {}", state.epochs_completed));
    }
    Ok(eval)
}

/// Result of a complete training run.
#[derive(Clone, Debug)]
pub struct Run {
    pub data: Dataset,
    pub state: TrainState,
    pub evaluation: Evaluation,
}

/// Loads data, trains from scratch (or from `resume`) and evaluates on the
/// test split.
pub fn train(cfg: &ExperimentConfig, resume: Option<TrainState>) -> Result<Run> {
    train_with(cfg, resume, |_| Ok(()))
}

pub fn train_with(
    cfg: &ExperimentConfig,
    resume: Option<TrainState>,
    on_epoch: impl FnMut(&TrainState) -> Result<()>,
) -> Result<Run> {
    cfg.validate()?;
    let data = dataset::load(cfg)?;
    let mut state = match resume {
        Some(s) => {
            if s.model.input != data.input {
                return Err(HarnessError::Config(format!(
                    "resume: checkpoint expects {:?} samples, data has {:?}",
                    s.model.input, data.input
                )));
            }
            s
        }
        None => TrainState::fresh(cfg, &data)?,
    };
    train_epochs(cfg, &mut state, &data.train, on_epoch)?;
    let evaluation = final_report(cfg, &state, &data)?;
    Ok(Run { data, state, evaluation })
}

//! The epoch loop: shuffled mini-batches with gradient accumulation,
//! per-epoch validation, best-validation checkpointing.

use autodiff::rng::SplitMix64;
use autodiff::{Adam, ParamSet, Tape, Tensor};

use crate::data::{NormalizationParams, WindowedDataset, NUM_CHANNELS, WINDOW_LEN};
use crate::error::RunError;
use crate::evidential::{constrain_vars, reference_scale_normalized, total_loss_with, RegularizerKind};
use crate::models::{mse_loss, ForwardMode, HeadKind, SequenceModel};

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// Largest chunk traced at once; batches are accumulated over chunks
    /// so batch_size only affects the update schedule, not memory.
    pub micro_batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub kl_weight: f64,
    /// KL reference scale in mg/dL (evidential heads only).
    pub beta_r_mgdl: f64,
    /// Regularizer accompanying the evidential data loss.
    pub regularizer: RegularizerKind,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 1024,
            micro_batch: 128,
            learning_rate: 1e-4,
            seed: 42,
            kl_weight: 0.01,
            beta_r_mgdl: 400.0,
            regularizer: RegularizerKind::KlReference,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{:?},{:?}\n", e.epoch, e.train_loss, e.val_loss));
        }
        out
    }
}

/// Train in place. The best-validation parameters are restored into the
/// model before returning. Zero epochs leaves the initialization intact.
pub fn train(
    model: &mut SequenceModel,
    train_set: &WindowedDataset,
    val_set: &WindowedDataset,
    norm: &NormalizationParams,
    opts: &TrainOptions,
) -> Result<TrainLog, RunError> {
    if train_set.n() == 0 || val_set.n() == 0 {
        return Err(RunError::State("empty training or validation set".into()));
    }
    let mut log = TrainLog {
        best_val_loss: f64::INFINITY,
        ..Default::default()
    };
    if opts.epochs == 0 {
        return Ok(log);
    }
    let beta_r = reference_scale_normalized(opts.beta_r_mgdl, norm.glucose_std());
    let mut adam = Adam::new(model.params(), opts.learning_rate);
    let mut shuffle_rng = SplitMix64::new(opts.seed).fork(0x51);
    let mut best: Option<ParamSet> = None;
    let mut dropout_step: u64 = 0;

    let mut order: Vec<usize> = (0..train_set.n()).collect();
    for epoch in 0..opts.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch_idx in (0..order.len()).step_by(opts.batch_size) {
            let batch = &order[batch_idx..(batch_idx + opts.batch_size).min(order.len())];
            let batch_n = batch.len();
            let mut grads: Vec<Option<Tensor>> = vec![None; model.params().len()];
            let mut batch_loss = 0.0;
            for chunk in batch.chunks(opts.micro_batch) {
                let weight = chunk.len() as f64 / batch_n as f64;
                let (loss_value, chunk_grads) =
                    step_forward_backward(model, train_set, norm, chunk, opts, beta_r, dropout_step)?;
                dropout_step += 1;
                if !loss_value.is_finite() {
                    return Err(RunError::Diverged {
                        epoch,
                        what: format!("loss {loss_value}"),
                    });
                }
                batch_loss += weight * loss_value;
                for (slot, g) in grads.iter_mut().zip(chunk_grads) {
                    if let Some(g) = g {
                        match slot {
                            Some(acc) => {
                                for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                                    *a += weight * v;
                                }
                            }
                            None => {
                                let mut scaled = g;
                                for v in scaled.data_mut() {
                                    *v *= weight;
                                }
                                *slot = Some(scaled);
                            }
                        }
                    }
                }
            }
            adam.step(model.params_mut(), &grads)?;
            epoch_loss += batch_loss * batch_n as f64;
            seen += batch_n;
        }
        let train_loss = epoch_loss / seen as f64;
        let val_loss = evaluate_loss(model, val_set, norm, opts, beta_r)?;
        if !val_loss.is_finite() {
            return Err(RunError::Diverged {
                epoch,
                what: format!("validation loss {val_loss}"),
            });
        }
        log.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = Some(epoch);
            best = Some(model.params().clone());
        }
    }
    if let Some(best) = best {
        model.set_params(best);
    }
    Ok(log)
}

/// Average loss over a dataset without gradients or dropout.
pub fn evaluate_loss(
    model: &SequenceModel,
    set: &WindowedDataset,
    norm: &NormalizationParams,
    opts: &TrainOptions,
    beta_r_norm: f64,
) -> Result<f64, RunError> {
    let mut total = 0.0;
    let idx: Vec<usize> = (0..set.n()).collect();
    for chunk in idx.chunks(opts.micro_batch) {
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let (input, target) = batch_tensors(set, norm, chunk);
        let out = model.forward(&tape, &bound, &input, ForwardMode::Eval)?;
        let y = tape.constant(target);
        let loss = match model.config().head {
            HeadKind::Evidential => {
                let c = constrain_vars(out, model.config().horizon)?;
                total_loss_with(&c, y, beta_r_norm, opts.kl_weight, opts.regularizer)?
            }
            _ => mse_loss(out, y),
        };
        total += loss.item() * chunk.len() as f64;
    }
    Ok(total / set.n() as f64)
}

fn step_forward_backward(
    model: &SequenceModel,
    set: &WindowedDataset,
    norm: &NormalizationParams,
    chunk: &[usize],
    opts: &TrainOptions,
    beta_r_norm: f64,
    dropout_step: u64,
) -> Result<(f64, Vec<Option<Tensor>>), RunError> {
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let (input, target) = batch_tensors(set, norm, chunk);
    let out = model.forward(
        &tape,
        &bound,
        &input,
        ForwardMode::Train { step: dropout_step },
    )?;
    let y = tape.constant(target);
    let loss = match model.config().head {
        HeadKind::Evidential => {
            let c = constrain_vars(out, model.config().horizon)?;
            total_loss_with(&c, y, beta_r_norm, opts.kl_weight, opts.regularizer)?
        }
        _ => mse_loss(out, y),
    };
    let value = loss.item();
    tape.backward(loss)?;
    let grads = bound
        .vars()
        .iter()
        .map(|v| tape.grad(*v))
        .collect::<Vec<_>>();
    Ok((value, grads))
}

/// Gather window inputs and normalized targets for a set of indices.
pub fn batch_tensors(
    set: &WindowedDataset,
    norm: &NormalizationParams,
    idx: &[usize],
) -> (Tensor, Tensor) {
    let (inputs, targets_mgdl) = set.batch(idx);
    let input = Tensor::new(vec![idx.len(), WINDOW_LEN, NUM_CHANNELS], inputs).expect("batch shape");
    let targets: Vec<f64> = targets_mgdl.iter().map(|&g| norm.norm_glucose(g)).collect();
    let target = Tensor::new(vec![idx.len(), set.horizon()], targets).expect("target shape");
    (input, target)
}

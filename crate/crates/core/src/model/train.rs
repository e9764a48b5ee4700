use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::labeling::{LabeledSample, Side};
use crate::nn::adam_step;
use crate::nn::AdamConfig;
use crate::scalar::Scalar;

use super::{Batch, ModelError, NetworkState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over training samples of the summed pinball losses.
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub stopped_early: bool,
}

fn thin<'s, 'a>(samples: &'s [LabeledSample<'a>], stride: usize) -> Vec<&'s LabeledSample<'a>> {
    samples.iter().step_by(stride).collect()
}

fn targets<F: Scalar>(samples: &[&LabeledSample<'_>]) -> [Vec<F>; 2] {
    Side::BOTH.map(|side| samples.iter().map(|s| F::from_f64_lossy(s.target.side(side))).collect())
}

/// Sets the per-side output centre and scale to the mean and standard
/// deviation of the training targets. A zero deviation leaves scale 1.
pub fn fit_target_scaling<F: Scalar>(state: &mut NetworkState<F>, samples: &[LabeledSample<'_>]) {
    if samples.is_empty() {
        return;
    }
    for side in Side::BOTH {
        let n = samples.len() as f64;
        let mean = samples.iter().map(|s| s.target.side(side)).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s.target.side(side) - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        state.target_center[side.index()] = mean;
        state.target_scale[side.index()] = if sd > 1e-9 * mean.abs() && sd > 0.0 { sd } else { 1.0 };
    }
}

/// Mean summed pinball loss over `samples`, in target units.
pub fn evaluate<F: Scalar>(state: &NetworkState<F>, samples: &[&LabeledSample<'_>]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for chunk in samples.chunks(256) {
        let batch = Batch::<F>::from_samples(chunk, state.config.window)?;
        let out = state.forward(&batch)?.outputs;
        let (loss, _) = state.total_loss(&out, &targets(chunk))?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Trains with early stopping, leaving the best-validation state in `state`.
pub fn train<F: Scalar>(
    state: &mut NetworkState<F>,
    train: &[LabeledSample<'_>],
    validation: &[LabeledSample<'_>],
) -> Result<TrainOutcome, ModelError> {
    train_with(state, train, validation, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with<F: Scalar>(
    state: &mut NetworkState<F>,
    train: &[LabeledSample<'_>],
    validation: &[LabeledSample<'_>],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptySplit("training"));
    }
    if validation.is_empty() {
        return Err(ModelError::EmptySplit("validation"));
    }
    let cfg = state.config.clone();
    fit_target_scaling(state, train);
    let train_set = thin(train, cfg.train_stride);
    let val_set = thin(validation, cfg.validation_stride);
    let adam = AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() };
    // A positive rescaling of the summed loss leaves its minimisers alone
    // and keeps gradients near unit scale for the optimiser.
    let inv_scale = F::from_f64_lossy(2.0 / (state.target_scale[0] + state.target_scale[1]));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, state.clone());
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let chunk: Vec<&LabeledSample<'_>> = idx.iter().map(|&i| train_set[i]).collect();
            let batch = Batch::<F>::from_samples(&chunk, cfg.window)?;
            let pass = state.forward(&batch).map_err(|e| diverged(e, epoch))?;
            let (loss, mut grads) = state.total_loss(&pass.outputs, &targets(&chunk))?;
            if !loss.is_finite() {
                return Err(ModelError::DivergedLoss { epoch });
            }
            epoch_loss += loss * chunk.len() as f64;
            grads.iter_mut().flatten().flatten().for_each(|g| *g *= inv_scale);
            state.zero_grad();
            state.backward(&pass, &grads).map_err(|e| diverged(e, epoch))?;
            state.adam_step += 1;
            let step = state.adam_step;
            adam_step(&mut state.params_mut(), &adam, step);
        }
        state.epoch += 1;
        let validation_loss = evaluate(state, &val_set).map_err(|e| diverged(e, epoch))?;
        if !validation_loss.is_finite() {
            return Err(ModelError::DivergedLoss { epoch });
        }
        let record = EpochRecord { epoch, train_loss: epoch_loss / train_set.len() as f64, validation_loss };
        on_epoch(&record);
        history.push(record);
        if validation_loss < best.0 {
            best = (validation_loss, epoch, state.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_validation_loss, best_epoch, best_state) = best;
    *state = best_state;
    Ok(TrainOutcome { history, best_epoch, best_validation_loss, stopped_early })
}

fn diverged(e: ModelError, epoch: usize) -> ModelError {
    match e {
        ModelError::Nn(crate::nn::NnError::NonFinite(_)) => ModelError::DivergedLoss { epoch },
        other => other,
    }
}

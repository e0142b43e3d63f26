use serde::{Deserialize, Serialize};

use crate::codec::TargetMaps;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::losses::{LossBreakdown, LossConfig};
use crate::scalar::Scalar;

use super::model::ToyNet;

/// Initial learning rate of the reference recipe.
pub const BASE_LEARNING_RATE: f64 = 1.25e-4;

/// `lr(step) = base · γ^⌊step / steps_per_epoch⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub gamma: f64,
    pub steps_per_epoch: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base: BASE_LEARNING_RATE,
            gamma: 0.95,
            steps_per_epoch: 1,
        }
    }
}

impl LrSchedule {
    pub fn at_epoch(&self, epoch: u64) -> f64 {
        self.base * self.gamma.powi(epoch.min(i32::MAX as u64) as i32)
    }

    pub fn at_step(&self, step: u64) -> f64 {
        self.at_epoch(step / self.steps_per_epoch.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer moments plus step bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<S> {
    pub first_moment: Vec<S>,
    pub second_moment: Vec<S>,
    pub step: u64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl<S: Scalar> TrainState<S> {
    pub fn new(param_count: usize, schedule: &LrSchedule, seed: u64) -> Self {
        Self {
            first_moment: vec![S::zero(); param_count],
            second_moment: vec![S::zero(); param_count],
            step: 0,
            learning_rate: schedule.at_step(0),
            seed,
        }
    }
}

/// One training example: assembled network input and its targets.
#[derive(Debug, Clone)]
pub struct TrainSample<S> {
    pub input: Grid<S>,
    pub targets: TargetMaps<S>,
}

/// Averages the per-sample loss and gradient over a batch.
pub fn batch_loss_and_grad<S: Scalar>(
    model: &ToyNet<S>,
    batch: &[TrainSample<S>],
    loss: &LossConfig,
) -> Result<(LossBreakdown, Vec<S>)> {
    if batch.is_empty() {
        return Err(Error::Validation("empty training batch".into()));
    }
    let mut grad = vec![S::zero(); model.param_count()];
    let mut acc = LossBreakdown::default();
    for sample in batch {
        let (b, g) = model.loss_and_grad(&sample.input, &sample.targets, loss)?;
        for (a, v) in grad.iter_mut().zip(g) {
            *a += v;
        }
        acc.object += b.object;
        acc.displacement += b.displacement;
        acc.depth += b.depth;
        acc.total += b.total;
    }
    let n = batch.len() as f64;
    let inv = S::lit(1.0 / n);
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((
        LossBreakdown {
            object: acc.object / n,
            displacement: acc.displacement / n,
            depth: acc.depth / n,
            total: acc.total / n,
        },
        grad,
    ))
}

/// One Adam update on the batch-mean loss. Parameters are left untouched if
/// the loss or the update would be non-finite.
pub fn train_step<S: Scalar>(
    model: &mut ToyNet<S>,
    state: &mut TrainState<S>,
    batch: &[TrainSample<S>],
    loss: &LossConfig,
    schedule: &LrSchedule,
    adam: &AdamParams,
) -> Result<LossBreakdown> {
    let (breakdown, grad) = batch_loss_and_grad(model, batch, loss)?;
    if !breakdown.total.is_finite() {
        return Err(Error::NonFiniteLoss("total"));
    }
    let lr = schedule.at_step(state.step);
    let t = (state.step + 1) as i32;
    let (b1, b2) = (S::lit(adam.beta1), S::lit(adam.beta2));
    let bc1 = S::lit(1.0 - adam.beta1.powi(t));
    let bc2 = S::lit(1.0 - adam.beta2.powi(t));
    let (lr_s, eps) = (S::lit(lr), S::lit(adam.eps));
    let one = S::one();

    let mut m = state.first_moment.clone();
    let mut v = state.second_moment.clone();
    let mut params = model.params().to_vec();
    for i in 0..params.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let update = lr_s * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
        params[i] -= update;
        if !params[i].is_finite() {
            return Err(Error::NonFiniteLoss("parameter update"));
        }
    }
    model.set_params(params)?;
    state.first_moment = m;
    state.second_moment = v;
    state.step += 1;
    state.learning_rate = schedule.at_step(state.step);
    Ok(breakdown)
}

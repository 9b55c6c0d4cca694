//! First-order baseline: momentum SGD with gradient-norm clipping.

use super::hf::{IterationMetrics, TrainState};
use crate::error::{Error, Result};
use crate::models::{bits, chunk_ranges, Batch, EvalOptions, Model};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdOptions {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Rescale gradients whose norm exceeds this; `None` disables clipping.
    pub clip: Option<f64>,
}

impl SgdOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::config("clip threshold must be positive"));
            }
        }
        Ok(())
    }
}

/// `v ← μ·v − ε·clip(g)`, `θ ← θ + v`.
pub fn momentum_update(theta: &mut [f64], velocity: &mut [f64], grad: &[f64], opts: &SgdOptions) -> Result<()> {
    opts.validate()?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericFailure("gradient"));
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let scale = match opts.clip {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    for ((t, v), g) in theta.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = opts.momentum * *v - opts.learning_rate * scale * g;
        *t += *v;
    }
    Ok(())
}

/// One momentum step on `batch`; returns the loss before the step.
pub fn sgd_momentum_step(
    model: &Model,
    theta: &mut [f64],
    velocity: &mut [f64],
    batch: &Batch,
    opts: &SgdOptions,
    eval: EvalOptions,
) -> Result<f64> {
    let (grad, loss) = model.gradient(theta, batch, eval)?;
    momentum_update(theta, velocity, &grad, opts)?;
    Ok(loss)
}

/// One outer iteration of the baseline: momentum steps over `batch` in
/// consecutive minibatches of at most `minibatch` sequences. The velocity is kept
/// in `state.previous_solution`. The reported training loss is the
/// target-weighted mean of the minibatch losses before each step.
pub fn sgd_iteration(
    model: &Model,
    state: &mut TrainState,
    batch: &Batch,
    opts: &SgdOptions,
    minibatch: usize,
    eval: EvalOptions,
) -> Result<IterationMetrics> {
    if minibatch == 0 {
        return Err(Error::config("minibatch must be at least 1"));
    }
    let mut velocity = state
        .previous_solution
        .take()
        .unwrap_or_else(|| vec![0.0; state.theta.len()]);
    let parts = batch.sequences.div_ceil(minibatch);
    let (mut total, mut weight) = (0.0, 0.0);
    for range in chunk_ranges(batch.sequences, parts) {
        let mb = batch.columns(range);
        let loss = sgd_momentum_step(model, &mut state.theta, &mut velocity, &mb, opts, eval)?;
        let w = mb.target_count() as f64;
        total += loss * w;
        weight += w;
    }
    state.previous_solution = Some(velocity);
    state.iteration += 1;
    Ok(IterationMetrics {
        iteration: state.iteration,
        train_bits: bits(total / weight),
        val_bits: None,
        mu: state.damping.mu,
        lambda: state.damping.lambda,
        cg_iterations: parts,
        stop_reason: "sgd".into(),
        epsilon: opts.learning_rate,
        accepted: true,
    })
}

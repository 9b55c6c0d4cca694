//! Outer training loop with validation-based early stopping.

use std::time::{Duration, Instant};

use super::hf::{hf_train_step, metrics_for, HfOptions, IterationMetrics, TrainState};
use crate::error::Result;
use crate::models::{Batch, Model};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    /// Total outer iterations, counting any already in the state.
    pub max_iterations: usize,
    /// Stop after this many iterations without a validation improvement.
    pub patience: usize,
    pub time_limit: Option<Duration>,
    /// Stop once the training loss falls below this many bits.
    pub stop_below_bits: Option<f64>,
    /// Stop once the validation metric falls below this value.
    pub stop_below_val: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_iterations: 100,
            patience: 5,
            time_limit: None,
            stop_below_bits: None,
            stop_below_val: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStop {
    MaxIterations,
    Patience,
    TimeLimit,
    Target,
}

/// Runs Hessian-free outer iterations until a stopping rule fires.
///
/// `batches(i)` returns the gradient batch for iteration `i` (0-based) and
/// the indices of its sequences forming the curvature batch. `validate`
/// returns the validation metric (bits/char for text), or `None` to skip
/// early stopping. `on_iteration` sees the state after every iteration,
/// e.g. to write metrics and checkpoints.
pub fn train<B, V, C>(
    model: &Model,
    state: &mut TrainState,
    hf: &HfOptions,
    opts: &TrainOptions,
    batches: B,
    validate: V,
    on_iteration: C,
) -> Result<TrainStop>
where
    B: FnMut(usize) -> Result<(Batch, Vec<usize>)>,
    V: FnMut(&[f64]) -> Result<Option<f64>>,
    C: FnMut(&TrainState, &IterationMetrics) -> Result<()>,
{
    train_loop(
        state,
        opts,
        |state, grad_batch, curv_batch| {
            let report = hf_train_step(model, state, grad_batch, curv_batch, hf)?;
            Ok(metrics_for(state, &report, None))
        },
        batches,
        validate,
        on_iteration,
    )
}

/// The stopping logic of [`train`] around an arbitrary update rule.
///
/// `step` advances `state` by one iteration (incrementing
/// `state.iteration`) on a gradient batch and its curvature subset, and
/// returns the metrics without the validation entry.
pub fn train_loop<S, B, V, C>(
    state: &mut TrainState,
    opts: &TrainOptions,
    mut step: S,
    mut batches: B,
    mut validate: V,
    mut on_iteration: C,
) -> Result<TrainStop>
where
    S: FnMut(&mut TrainState, &Batch, &Batch) -> Result<IterationMetrics>,
    B: FnMut(usize) -> Result<(Batch, Vec<usize>)>,
    V: FnMut(&[f64]) -> Result<Option<f64>>,
    C: FnMut(&TrainState, &IterationMetrics) -> Result<()>,
{
    let start = Instant::now();
    while state.iteration < opts.max_iterations {
        let (grad_batch, curv_idx) = batches(state.iteration)?;
        let curv_batch = grad_batch.subset(&curv_idx);
        let mut metrics = step(state, &grad_batch, &curv_batch)?;
        let val = validate(&state.theta)?;
        if let Some(v) = val {
            match state.best_val {
                Some(best) if v >= best => state.stale += 1,
                _ => {
                    state.best_val = Some(v);
                    state.stale = 0;
                }
            }
        }
        metrics.val_bits = val;
        log::info!("{}", metrics.tsv());
        state.history.push(metrics.clone());
        on_iteration(state, &metrics)?;
        let below_val = matches!((val, opts.stop_below_val), (Some(v), Some(t)) if v < t);
        if below_val || opts.stop_below_bits.is_some_and(|t| metrics.train_bits < t) {
            return Ok(TrainStop::Target);
        }
        if val.is_some() && state.stale >= opts.patience {
            return Ok(TrainStop::Patience);
        }
        if opts.time_limit.is_some_and(|l| start.elapsed() >= l) {
            return Ok(TrainStop::TimeLimit);
        }
    }
    Ok(TrainStop::MaxIterations)
}

impl TrainStop {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainStop::MaxIterations => "max_iterations",
            TrainStop::Patience => "patience",
            TrainStop::TimeLimit => "time_limit",
            TrainStop::Target => "target",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::{DampingMode, DampingState};

    fn fake_step(bits: Vec<f64>) -> impl FnMut(&mut TrainState, &Batch, &Batch) -> Result<IterationMetrics> {
        move |state, _, _| {
            state.iteration += 1;
            Ok(IterationMetrics {
                iteration: state.iteration,
                train_bits: bits[state.iteration - 1],
                val_bits: None,
                mu: state.damping.mu,
                lambda: 0.0,
                cg_iterations: 0,
                stop_reason: "test".into(),
                epsilon: 1.0,
                accepted: true,
            })
        }
    }

    fn run(train_bits: Vec<f64>, val: Vec<Option<f64>>, opts: TrainOptions) -> (TrainStop, TrainState) {
        let damping = DampingState::new(DampingMode::Structural, 0.1, 0.0).unwrap();
        let mut state = TrainState::new(vec![0.0], damping);
        let batch = Batch::symbols(1, 2, vec![0, 1], vec![1, 0]).unwrap();
        let mut calls = 0;
        let stop = train_loop(
            &mut state,
            &opts,
            fake_step(train_bits),
            |_| Ok((batch.clone(), vec![0])),
            |_| {
                calls += 1;
                Ok(val[calls - 1])
            },
            |_, _| Ok(()),
        )
        .unwrap();
        (stop, state)
    }

    #[test]
    fn stops_on_patience() {
        let opts = TrainOptions {
            patience: 2,
            ..TrainOptions::default()
        };
        let val = vec![Some(3.0), Some(2.0), Some(2.5), Some(2.0), Some(1.0)];
        let (stop, state) = run(vec![1.0; 5], val, opts);
        assert_eq!(stop, TrainStop::Patience);
        assert_eq!(state.iteration, 4);
        assert_eq!(state.best_val, Some(2.0));
        assert_eq!(state.history[3].val_bits, Some(2.0));
    }

    #[test]
    fn stops_below_targets() {
        let opts = TrainOptions {
            stop_below_val: Some(1.5),
            ..TrainOptions::default()
        };
        let (stop, state) = run(vec![1.0; 5], vec![Some(2.0), Some(1.4), None, None, None], opts);
        assert_eq!((stop, state.iteration), (TrainStop::Target, 2));
        let opts = TrainOptions {
            stop_below_bits: Some(0.5),
            ..TrainOptions::default()
        };
        let (stop, state) = run(vec![1.0, 0.7, 0.4, 0.1], vec![None; 4], opts);
        assert_eq!((stop, state.iteration), (TrainStop::Target, 3));
    }

    #[test]
    fn max_iterations_bounds_the_run() {
        let opts = TrainOptions {
            max_iterations: 3,
            ..TrainOptions::default()
        };
        let (stop, state) = run(vec![1.0; 3], vec![None; 3], opts);
        assert_eq!((stop, state.iteration), (TrainStop::MaxIterations, 3));
    }
}

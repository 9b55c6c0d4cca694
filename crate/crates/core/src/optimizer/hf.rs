//! One Hessian-free outer iteration: gradient, damped CG, and the update.

use serde::{Deserialize, Serialize};

use super::cg::{conjugate_gradient, CgOptions, CgOutcome, CgStep, HookAction, StopReason};
use super::damping::{adjust_mu, DampingMode, DampingState};
use super::linesearch::{backtracking_line_search, LineSearchOptions};
use crate::error::{Error, Result};
use crate::models::{bits, Batch, CurvatureContext, EvalOptions, Model, StructuralTarget};

#[derive(Debug, Clone, PartialEq)]
pub struct HfOptions {
    pub cg: CgOptions,
    pub line_search: LineSearchOptions,
    /// CG stops in line-search mode once this many searches have failed.
    pub max_linesearch_failures: usize,
    /// Evaluate the loss for the `μ` update every this many CG iterations.
    pub mu_eval_every: usize,
    /// Start CG from `decay × previous solution` instead of zero.
    pub warm_start: Option<f64>,
    pub structural_target: StructuralTarget,
    pub eval: EvalOptions,
}

impl Default for HfOptions {
    fn default() -> Self {
        HfOptions {
            cg: CgOptions::default(),
            line_search: LineSearchOptions::default(),
            max_linesearch_failures: 5,
            mu_eval_every: 1,
            warm_start: None,
            structural_target: StructuralTarget::HiddenOutput,
            eval: EvalOptions::default(),
        }
    }
}

impl HfOptions {
    pub fn validate(&self) -> Result<()> {
        self.cg.validate()?;
        let ls = &self.line_search;
        if !(ls.decay > 0.0 && ls.decay < 1.0) {
            return Err(Error::config("line search decay must lie in (0, 1)"));
        }
        if self.max_linesearch_failures == 0 || self.mu_eval_every == 0 {
            return Err(Error::config(
                "max_linesearch_failures and mu_eval_every must be at least 1",
            ));
        }
        if let Some(d) = self.warm_start {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::config("warm start decay must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Gradient-batch loss after the update, in bits.
    pub train_bits: f64,
    pub val_bits: Option<f64>,
    /// `μ` after this iteration's adaptation.
    pub mu: f64,
    pub lambda: f64,
    pub cg_iterations: usize,
    pub stop_reason: String,
    /// Step scale chosen by the final line search (1 in line-search mode).
    pub epsilon: f64,
    pub accepted: bool,
}

impl IterationMetrics {
    pub const HEADER: &'static str =
        "iteration\ttrain_bits\tval_bits\tmu\tlambda\tcg_iters\tstop_reason\tepsilon\taccepted";

    /// Tab-separated values in [`Self::HEADER`] order. Floats use the
    /// shortest representation that round-trips exactly.
    pub fn tsv(&self) -> String {
        let val = self.val_bits.map_or_else(|| "nan".to_string(), fmt_float);
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.iteration,
            fmt_float(self.train_bits),
            val,
            fmt_float(self.mu),
            fmt_float(self.lambda),
            self.cg_iterations,
            self.stop_reason,
            fmt_float(self.epsilon),
            self.accepted
        )
    }
}

/// Shortest round-tripping text, switching to exponent form outside
/// `[1e-4, 1e7)`.
pub fn fmt_float(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e7).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

/// Everything carried between outer iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub theta: Vec<f64>,
    pub damping: DampingState,
    /// Last CG solution, for warm starts.
    pub previous_solution: Option<Vec<f64>>,
    /// Completed outer iterations.
    pub iteration: usize,
    pub history: Vec<IterationMetrics>,
    /// Best validation bits/char so far and iterations since it improved.
    pub best_val: Option<f64>,
    pub stale: usize,
}

impl TrainState {
    pub fn new(theta: Vec<f64>, damping: DampingState) -> Self {
        TrainState {
            theta,
            damping,
            previous_solution: None,
            iteration: 0,
            history: Vec::new(),
            best_val: None,
            stale: 0,
        }
    }
}

/// What one outer iteration did.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub loss_before: f64,
    pub loss_after: f64,
    pub cg: CgOutcome,
    pub epsilon: f64,
    pub accepted: bool,
}

fn add_scaled(theta: &[f64], x: &[f64], scale: f64) -> Vec<f64> {
    theta.iter().zip(x).map(|(t, d)| t + scale * d).collect()
}

/// Mean loss, with numeric overflow reported as `+∞`.
fn loss_or_inf(model: &Model, theta: &[f64], batch: &Batch, eval: EvalOptions) -> Result<f64> {
    match model.loss(theta, batch, eval) {
        Ok(l) => Ok(l),
        Err(Error::NonFinite { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// CG with per-direction line searches: `x_q` advances as usual while
/// `x_f = Σ εᵢαᵢSᵢ` takes each direction only as far as it lowers the
/// curvature-batch loss. A failed search contributes nothing to `x_f`.
pub fn cg_with_linesearch_damping(
    ctx: &CurvatureContext,
    grad: &[f64],
    x0: Option<&[f64]>,
    opts: &HfOptions,
) -> Result<(Vec<f64>, CgOutcome)> {
    let model = ctx.model();
    let theta = ctx.theta();
    let batch = ctx.batch();
    let eval = opts.eval;
    linesearch_cg(
        |v| ctx.gv_product(v),
        grad,
        x0,
        opts,
        ctx.loss(),
        |x: &[f64]| loss_or_inf(model, &add_scaled(theta, x, 1.0), batch, eval),
    )
}

/// Line-search damping over an arbitrary operator and loss of the update.
pub fn linesearch_cg<A, L>(
    apply_a: A,
    grad: &[f64],
    x0: Option<&[f64]>,
    opts: &HfOptions,
    base_loss: f64,
    mut loss_at: L,
) -> Result<(Vec<f64>, CgOutcome)>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>>,
    L: FnMut(&[f64]) -> Result<f64>,
{
    let mut x_f = vec![0.0; grad.len()];
    let mut current = base_loss;
    let mut failures = 0;
    let mut hook = |step: &CgStep| -> Result<HookAction> {
        let search = backtracking_line_search(
            |eps| loss_at(&add_scaled(&x_f, step.direction, eps * step.alpha)),
            current,
            opts.line_search,
        )?;
        if search.failed {
            failures += 1;
            if failures >= opts.max_linesearch_failures {
                return Ok(HookAction::Stop(StopReason::LineSearchFailures));
            }
        } else {
            let scale = search.epsilon * step.alpha;
            for (f, s) in x_f.iter_mut().zip(step.direction) {
                *f += scale * s;
            }
            current = search.loss;
        }
        Ok(HookAction::Continue)
    };
    let out = conjugate_gradient(apply_a, grad, x0, &opts.cg, &mut hook)?;
    Ok((x_f, out))
}

/// Runs one outer iteration and updates `state` in place.
pub fn hf_train_step(
    model: &Model,
    state: &mut TrainState,
    grad_batch: &Batch,
    curv_batch: &Batch,
    opts: &HfOptions,
) -> Result<StepReport> {
    opts.validate()?;
    let eval = opts.eval;
    let (grad, loss_before) = model.gradient(&state.theta, grad_batch, eval)?;
    state.damping.mu0 = state.damping.mu;
    let (mu_op, lambda_op) = state.damping.operator_weights();
    let ctx = CurvatureContext::new(model, &state.theta, curv_batch, mu_op, lambda_op, eval.workers)?
        .with_structural_target(opts.structural_target);
    let x0 = match (opts.warm_start, &state.previous_solution) {
        (Some(decay), Some(prev)) => Some(prev.iter().map(|x| decay * x).collect::<Vec<_>>()),
        _ => None,
    };

    let report = match state.damping.mode {
        DampingMode::Structural | DampingMode::TikhonovPlusStructural => {
            let f0 = ctx.loss();
            let mut damping = state.damping;
            let every = opts.mu_eval_every;
            let mut hook = |step: &CgStep| -> Result<HookAction> {
                if !step.iteration.is_multiple_of(every) || step.q == 0.0 {
                    return Ok(HookAction::Continue);
                }
                let f = loss_or_inf(model, &add_scaled(&state.theta, step.x, 1.0), curv_batch, eval)?;
                damping = adjust_mu(damping, f, f0, step.q, 0.0)?;
                if damping.mu0 > 0.0 && damping.mu >= 3.0 * damping.mu0 {
                    return Ok(HookAction::Stop(StopReason::MuEscalation));
                }
                Ok(HookAction::Continue)
            };
            let cg = conjugate_gradient(|v| ctx.gv_product(v), &grad, x0.as_deref(), &opts.cg, &mut hook)?;
            state.damping = damping;
            let search = backtracking_line_search(
                |eps| loss_or_inf(model, &add_scaled(&state.theta, &cg.x, eps), grad_batch, eval),
                loss_before,
                opts.line_search,
            )?;
            let accepted = !search.failed;
            if accepted {
                state.theta = add_scaled(&state.theta, &cg.x, search.epsilon);
            }
            StepReport {
                loss_before,
                loss_after: if accepted { search.loss } else { loss_before },
                epsilon: search.epsilon,
                accepted,
                cg,
            }
        }
        DampingMode::LineSearch => {
            let (x_f, cg) = cg_with_linesearch_damping(&ctx, &grad, x0.as_deref(), opts)?;
            let candidate = add_scaled(&state.theta, &x_f, 1.0);
            let loss_after = loss_or_inf(model, &candidate, grad_batch, eval)?;
            let accepted = loss_after <= loss_before;
            if accepted {
                state.theta = candidate;
            }
            StepReport {
                loss_before,
                loss_after: if accepted { loss_after } else { loss_before },
                epsilon: 1.0,
                accepted,
                cg,
            }
        }
    };
    state.previous_solution = Some(report.cg.x.clone());
    state.iteration += 1;
    Ok(report)
}

/// Builds the metrics record for a finished step.
pub fn metrics_for(state: &TrainState, report: &StepReport, val_bits: Option<f64>) -> IterationMetrics {
    IterationMetrics {
        iteration: state.iteration,
        train_bits: bits(report.loss_after),
        val_bits,
        mu: state.damping.mu,
        lambda: state.damping.lambda,
        cg_iterations: report.cg.trace.iterations(),
        stop_reason: report.cg.reason.to_string(),
        epsilon: report.epsilon,
        accepted: report.accepted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_op(d: &[f64]) -> impl FnMut(&[f64]) -> Result<Vec<f64>> + '_ {
        move |v: &[f64]| Ok(v.iter().zip(d).map(|(a, b)| a * b).collect())
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.0, 1.5, 3.0e-300, -2.5e12, 0.1 + 0.2, f64::INFINITY] {
            assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_float(6.0e-20), "6e-20");
    }

    #[test]
    fn exact_loss_gives_the_cg_solution() {
        // The loss equals the quadratic, so every search accepts ε = 1.
        let d = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, -1.0, 0.5, 2.0];
        let q = |x: &[f64]| -> Result<f64> {
            Ok(x.iter()
                .zip(&d)
                .zip(&b)
                .map(|((x, d), b)| 0.5 * d * x * x + b * x)
                .sum())
        };
        let opts = HfOptions::default();
        let (x_f, out) = linesearch_cg(diag_op(&d), &b, None, &opts, 0.0, q).unwrap();
        assert_eq!(x_f, out.x);
    }

    #[test]
    fn stops_after_five_failures() {
        let d: Vec<f64> = (1..=40).map(|i| i as f64).collect();
        let b = vec![1.0; 40];
        let mut evals = 0;
        let worse = |_: &[f64]| -> Result<f64> {
            evals += 1;
            Ok(1.0)
        };
        let opts = HfOptions::default();
        let (x_f, out) = linesearch_cg(diag_op(&d), &b, None, &opts, 0.0, worse).unwrap();
        assert_eq!(out.reason, StopReason::LineSearchFailures);
        assert_eq!(out.trace.iterations(), 5);
        assert!(x_f.iter().all(|&x| x == 0.0));
        // Constant loss: each search probes ε = 1 and one decay.
        assert_eq!(evals, 10);
    }
}

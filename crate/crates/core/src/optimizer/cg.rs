//! Matrix-free linear conjugate gradient on `q(x) = ½xᵀAx + bᵀx`.

use std::fmt;

use crate::error::{Error, Result};

/// Why a CG run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    /// Relative progress over the last `k` iterations fell below `ε·k`.
    Progress,
    /// Residual norm reached the requested tolerance.
    Residual,
    /// The adapted structural damping weight reached `3μ₀`.
    MuEscalation,
    /// Too many line searches failed to improve the loss.
    LineSearchFailures,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::MaxIterations => "max_iters",
            StopReason::Progress => "progress",
            StopReason::Residual => "residual",
            StopReason::MuEscalation => "mu_escalation",
            StopReason::LineSearchFailures => "linesearch_failures",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOptions {
    pub max_iters: usize,
    /// Window `k` of the relative-progress rule.
    pub progress_window: usize,
    /// Tolerance `ε` of the relative-progress rule.
    pub progress_tol: f64,
    /// Stop once `‖r‖ ≤ residual_tol·‖b‖`; 0 disables the check except for
    /// an exactly zero residual.
    pub residual_tol: f64,
    /// Keep every iterate and search direction in the trace.
    pub record_iterates: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            max_iters: 100,
            progress_window: 10,
            progress_tol: 0.0005,
            residual_tol: 0.0,
            record_iterates: false,
        }
    }
}

impl CgOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::config("cg max_iters must be at least 1"));
        }
        if self.progress_window == 0 {
            return Err(Error::config("cg progress_window must be at least 1"));
        }
        if !(self.progress_tol > 0.0) {
            return Err(Error::config("cg progress_tol must be positive"));
        }
        if !(self.residual_tol >= 0.0) {
            return Err(Error::config("cg residual_tol must be non-negative"));
        }
        Ok(())
    }
}

/// Per-iteration record. `q[0]` is the value at the starting point; the
/// other vectors have one entry per iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CgTrace {
    pub q: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub residual_norm: Vec<f64>,
    pub iterates: Vec<Vec<f64>>,
    pub directions: Vec<Vec<f64>>,
}

impl CgTrace {
    pub fn iterations(&self) -> usize {
        self.alpha.len()
    }
}

/// State visible to a hook after iteration `iteration` (1-based) updated
/// the iterate along `direction` with step `alpha`.
#[derive(Debug)]
pub struct CgStep<'a> {
    pub iteration: usize,
    pub x: &'a [f64],
    pub q: f64,
    pub alpha: f64,
    pub direction: &'a [f64],
}

pub enum HookAction {
    Continue,
    Stop(StopReason),
}

/// Caller-supplied stopping rule, run after every iteration.
pub trait CgHook {
    fn after_iteration(&mut self, step: &CgStep) -> Result<HookAction>;
}

impl<F> CgHook for F
where
    F: FnMut(&CgStep) -> Result<HookAction>,
{
    fn after_iteration(&mut self, step: &CgStep) -> Result<HookAction> {
        self(step)
    }
}

/// A hook that never stops the run.
pub struct NoHook;

impl CgHook for NoHook {
    fn after_iteration(&mut self, _: &CgStep) -> Result<HookAction> {
        Ok(HookAction::Continue)
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub trace: CgTrace,
    pub reason: StopReason,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `½·xᵀ(r + b)`, which equals `q(x)` when `r = Ax + b`.
fn quadratic(x: &[f64], r: &[f64], b: &[f64]) -> f64 {
    0.5 * x.iter().zip(r).zip(b).map(|((x, r), b)| x * (r + b)).sum::<f64>()
}

/// `(q(i) − q(i−k)) / q(i) < ε·k`, only once `i ≥ k` and `q(i) < 0`.
pub fn progress_stalled(q: &[f64], k: usize, eps: f64) -> bool {
    let i = q.len() - 1;
    if i < k || q[i] >= 0.0 {
        return false;
    }
    (q[i] - q[i - k]) / q[i] < eps * k as f64
}

/// Minimizes `½xᵀAx + bᵀx` with one `A` product per iteration.
pub fn conjugate_gradient<A, H>(
    mut apply_a: A,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &CgOptions,
    hook: &mut H,
) -> Result<CgOutcome>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>>,
    H: CgHook + ?Sized,
{
    opts.validate()?;
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    if let Some(x0) = x0 {
        if x0.len() != n {
            return Err(Error::Dimension {
                context: "cg initial guess",
                expected: n,
                got: x0.len(),
            });
        }
        if x0.iter().any(|&v| v != 0.0) {
            x.copy_from_slice(x0);
            let ax = checked(&mut apply_a, &x)?;
            for ((ri, a), bi) in r.iter_mut().zip(&ax).zip(b) {
                *ri = a + bi;
            }
        }
    }
    let mut s: Vec<f64> = r.iter().map(|v| -v).collect();
    let b_norm = norm(b);
    let mut trace = CgTrace {
        q: vec![quadratic(&x, &r, b)],
        ..Default::default()
    };
    if norm(&r) == 0.0 {
        return Ok(CgOutcome {
            x,
            trace,
            reason: StopReason::Residual,
        });
    }
    let mut reason = StopReason::MaxIterations;
    for i in 1..=opts.max_iters {
        let a_s = checked(&mut apply_a, &s)?;
        let curvature = dot(&s, &a_s);
        if !(curvature > 0.0) {
            return Err(Error::NotPositiveDefinite {
                iteration: i,
                curvature,
            });
        }
        let alpha = -dot(&s, &r) / curvature;
        for j in 0..n {
            x[j] += alpha * s[j];
            r[j] += alpha * a_s[j];
        }
        // Equal to ½xᵀ(r + b) in exact arithmetic; the decrement form
        // cannot rise through rounding once CG has converged.
        let q = trace.q[i - 1] - 0.5 * alpha * alpha * curvature;
        let r_norm = norm(&r);
        trace.q.push(q);
        trace.alpha.push(alpha);
        trace.residual_norm.push(r_norm);
        if opts.record_iterates {
            trace.iterates.push(x.clone());
            trace.directions.push(s.clone());
        }
        let step = CgStep {
            iteration: i,
            x: &x,
            q,
            alpha,
            direction: &s,
        };
        if let HookAction::Stop(why) = hook.after_iteration(&step)? {
            reason = why;
            break;
        }
        if progress_stalled(&trace.q, opts.progress_window, opts.progress_tol) {
            reason = StopReason::Progress;
            break;
        }
        if r_norm == 0.0 || r_norm <= opts.residual_tol * b_norm {
            reason = StopReason::Residual;
            break;
        }
        let beta = dot(&r, &a_s) / curvature;
        trace.beta.push(beta);
        for j in 0..n {
            s[j] = -r[j] + beta * s[j];
        }
    }
    Ok(CgOutcome { x, trace, reason })
}

fn checked<A>(apply_a: &mut A, v: &[f64]) -> Result<Vec<f64>>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let out = apply_a(v)?;
    if out.len() != v.len() {
        return Err(Error::Dimension {
            context: "cg operator output",
            expected: v.len(),
            got: out.len(),
        });
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure("cg operator"));
    }
    Ok(out)
}

//! Damping state and the reduction-ratio rule for the structural weight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How curvature is damped during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingMode {
    /// `G + μ·G_s`; `λ` is ignored.
    Structural,
    /// Plain `G` (plus `λI` when set) with per-direction line searches.
    LineSearch,
    /// `G + μ·G_s + λI`.
    TikhonovPlusStructural,
}

impl DampingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DampingMode::Structural => "structural",
            DampingMode::LineSearch => "line_search",
            DampingMode::TikhonovPlusStructural => "tikhonov_plus_structural",
        }
    }
}

/// Direction of the `μ` update for a given reduction ratio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuRule {
    /// Poor agreement (`p < 0.25`) shrinks `μ`; good agreement
    /// (`p > 0.75`) grows it.
    #[default]
    AsWritten,
    /// Levenberg–Marquardt direction: poor agreement grows `μ`, good
    /// agreement shrinks it.
    Classic,
}

impl MuRule {
    pub fn as_str(self) -> &'static str {
        match self {
            MuRule::AsWritten => "as_written",
            MuRule::Classic => "classic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampingState {
    pub mu: f64,
    /// `μ` at the start of the current CG run.
    pub mu0: f64,
    pub lambda: f64,
    pub mode: DampingMode,
    #[serde(default)]
    pub rule: MuRule,
}

impl DampingState {
    pub fn new(mode: DampingMode, mu: f64, lambda: f64) -> Result<Self> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(Error::config(format!("mu must be finite and non-negative, got {mu}")));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::config(format!(
                "lambda must be finite and non-negative, got {lambda}"
            )));
        }
        Ok(DampingState {
            mu,
            mu0: mu,
            lambda,
            mode,
            rule: MuRule::AsWritten,
        })
    }

    pub fn with_rule(mut self, rule: MuRule) -> Self {
        self.rule = rule;
        self
    }

    /// `(μ, λ)` applied by the curvature operator in this mode.
    pub fn operator_weights(&self) -> (f64, f64) {
        match self.mode {
            DampingMode::Structural => (self.mu0, 0.0),
            DampingMode::LineSearch => (0.0, self.lambda),
            DampingMode::TikhonovPlusStructural => (self.mu0, self.lambda),
        }
    }

    pub fn uses_structural(&self) -> bool {
        self.mode != DampingMode::LineSearch
    }
}

/// Reduction-ratio update of `μ` with
/// `p = (f_new − f_old) / (q_new − q_old)`. Under [`MuRule::AsWritten`],
/// `p < 0.25` scales `μ` by 2/3 and `p > 0.75` by 3/2; [`MuRule::Classic`]
/// swaps the two factors. Strict inequalities: 0.25 and 0.75 leave `μ`
/// alone.
pub fn adjust_mu(state: DampingState, f_new: f64, f_old: f64, q_new: f64, q_old: f64) -> Result<DampingState> {
    let dq = q_new - q_old;
    if dq == 0.0 {
        return Err(Error::UndefinedRatio);
    }
    let p = (f_new - f_old) / dq;
    let (low, high) = match state.rule {
        MuRule::AsWritten => (2.0 / 3.0, 3.0 / 2.0),
        MuRule::Classic => (3.0 / 2.0, 2.0 / 3.0),
    };
    let mu = if p < 0.25 {
        state.mu * low
    } else if p > 0.75 {
        state.mu * high
    } else {
        state.mu
    };
    Ok(DampingState { mu, ..state })
}

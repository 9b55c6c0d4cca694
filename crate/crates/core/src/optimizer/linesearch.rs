//! Backtracking line search along a fixed direction.

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchOptions {
    /// Decay factor `τ ∈ (0, 1)`.
    pub decay: f64,
    pub max_iterations: usize,
}

impl Default for LineSearchOptions {
    fn default() -> Self {
        LineSearchOptions {
            decay: 0.5,
            max_iterations: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchResult {
    /// Accepted step scale.
    pub epsilon: f64,
    /// Loss at the accepted scale.
    pub loss: f64,
    /// The accepted loss does not improve on the pre-update loss.
    pub failed: bool,
    /// Number of loss evaluations.
    pub evaluations: usize,
}

/// Starts at `ε = 1` and keeps multiplying by `τ` while the loss improves,
/// stopping at the first probe that does not. Non-finite losses count as
/// `+∞`. `base_loss` is the loss before the update.
pub fn backtracking_line_search<F>(
    mut eval_loss: F,
    base_loss: f64,
    opts: LineSearchOptions,
) -> Result<LineSearchResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut eval = |eps: f64| -> Result<f64> {
        let l = eval_loss(eps)?;
        Ok(if l.is_finite() { l } else { f64::INFINITY })
    };
    let mut epsilon = 1.0;
    let mut loss = eval(epsilon)?;
    let mut evaluations = 1;
    for _ in 0..opts.max_iterations {
        let trial = opts.decay * epsilon;
        let l = eval(trial)?;
        evaluations += 1;
        if l < loss {
            loss = l;
            epsilon = trial;
        } else {
            break;
        }
    }
    Ok(LineSearchResult {
        epsilon,
        loss,
        failed: !(loss < base_loss),
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(f: impl Fn(f64) -> f64, base: f64) -> LineSearchResult {
        backtracking_line_search(|e| Ok(f(e)), base, LineSearchOptions::default()).unwrap()
    }

    #[test]
    fn increasing_loss_decays_to_the_limit() {
        let r = run(|e| 1.0 + e, 1.0);
        assert_eq!(r.epsilon, 0.5f64.powi(10));
        assert!(r.failed);
        assert_eq!(r.evaluations, 11);
        let r = run(|e| 1.0 + e, 2.0);
        assert!(!r.failed);
    }

    #[test]
    fn minimum_at_one() {
        let r = run(|e| (e - 1.0) * (e - 1.0), 1.0);
        assert_eq!(r.epsilon, 1.0);
        assert_eq!(r.evaluations, 2);
        assert!(!r.failed);
    }

    #[test]
    fn stops_at_first_non_improvement() {
        // Probes 1, 0.5, 0.25, 0.125 give 0.49, 0.04, 0.0025, 0.030625.
        let r = run(|e| (e - 0.3) * (e - 0.3), 1.0);
        assert_eq!(r.epsilon, 0.25);
        assert_eq!(r.evaluations, 4);
    }

    #[test]
    fn non_finite_counts_as_worse() {
        let r = run(|e| if e > 0.6 { f64::NAN } else { e }, 10.0);
        assert_eq!(r.epsilon, 0.5f64.powi(10));
        assert!(!r.failed);
    }
}

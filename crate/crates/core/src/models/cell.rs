use ndarray::{Array2, ArrayView2};

use super::batch::StepInput;

/// Recurrent state carried between timesteps: one matrix per part
/// (`[H]`, `[H_out, H_state]`, or one `H_l` per stacked layer).
#[derive(Debug, Clone, PartialEq)]
pub struct State(pub Vec<Array2<f64>>);

impl State {
    pub fn zeros(rows: &[usize], n: usize) -> State {
        State(rows.iter().map(|&r| Array2::zeros((r, n))).collect())
    }

    pub fn parts(&self) -> &[Array2<f64>] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|m| m.iter().all(|x| x.is_finite()))
    }
}

/// Everything one forward timestep produced.
#[derive(Debug, Clone)]
pub struct Step {
    /// Recurrent state after this step.
    pub state: State,
    /// Pre-nonlinearity network outputs `W_oh·H(t)` (+ output bias).
    pub logits: Array2<f64>,
    /// Cell-specific intermediates; names come from [`Cell::aux_names`].
    pub aux: Vec<Array2<f64>>,
}

/// Which recurrent quantity structural damping penalizes in gated cells.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructuralTarget {
    /// The tanh output `H_out(t)` that feeds the recurrence.
    #[default]
    HiddenOutput,
    /// The cell's internal state `H_state(t)`.
    CellState,
}

pub(crate) type Weights<'a> = [ArrayView2<'a, f64>];

/// One timestep of a recurrent architecture, with its derivative passes.
///
/// Weight slices are indexed by layout block number.
pub(crate) trait Cell: Send + Sync {
    /// Row count of every state part.
    fn state_rows(&self) -> Vec<usize>;

    fn aux_names(&self) -> Vec<String>;

    fn step(&self, w: &Weights, prev: &State, x: &StepInput) -> Step;

    /// Directional derivative of one step along `v`, given the directional
    /// derivative `rprev` of the previous state. Returns `(R(state), R(logits))`.
    fn r_step(
        &self,
        w: &Weights,
        v: &Weights,
        prev: &State,
        rprev: &State,
        x: &StepInput,
        step: &Step,
    ) -> (State, Array2<f64>);

    /// Back-propagates one step. On entry `carry` holds ∂E/∂(this step's
    /// state) from later timesteps and any direct injection; on exit it
    /// holds ∂E/∂(previous state). Weight gradients accumulate into `g`.
    #[allow(clippy::too_many_arguments)]
    fn back_step(
        &self,
        w: &Weights,
        g: &mut [Array2<f64>],
        prev: &State,
        x: &StepInput,
        step: &Step,
        dlogits: &Array2<f64>,
        carry: &mut State,
    );

    /// State parts penalized by structural damping.
    fn damped_parts(&self, target: StructuralTarget) -> Vec<usize>;
}

//! Recurrent architectures and whole-batch passes: forward, back-propagation
//! through time, R-forward directional derivatives and Gauss–Newton vector
//! products with structural damping.
//!
//! Losses, gradients and curvature products are all means over the
//! `(timestep, sequence)` pairs that carry a target, so damping constants do
//! not depend on batch size or sequence length.

mod batch;
mod cell;
mod gated;
mod lstm;
mod mlstm;
mod mrnn;
mod ops;
mod rnn;
mod stacked;

use std::borrow::Cow;
use std::f64::consts::LN_2;
use std::ops::Range;

use ndarray::{concatenate, Array2, ArrayView2, Axis, Zip};

pub use batch::{chunk_ranges, Batch, Inputs, StepInput, Targets};
pub use cell::{State, Step, StructuralTarget};
pub use gated::cell_state;

use crate::config::{Architecture, ModelConfig, OutputMode};
use crate::error::{Error, Result};
use crate::parallel;
use crate::params::Layout;
use cell::Cell;

/// How a batch evaluation is carried out. None of these change the result
/// beyond floating-point summation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Segment length `k` for checkpointed back-propagation; 0 stores every
    /// timestep.
    pub checkpoint_interval: usize,
    /// Number of contiguous sequence chunks evaluated independently and
    /// summed in chunk order.
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            checkpoint_interval: 0,
            workers: 1,
        }
    }
}

impl EvalOptions {
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_checkpoint_interval(mut self, k: usize) -> Self {
        self.checkpoint_interval = k;
        self
    }

    /// `⌈√T⌉`, the usual checkpoint interval.
    pub fn sqrt_interval(steps: usize) -> usize {
        (steps as f64).sqrt().ceil().max(1.0) as usize
    }
}

/// Converts a mean loss in nats to bits.
pub fn bits(loss: f64) -> f64 {
    loss / LN_2
}

/// Column-wise softmax with max subtraction.
pub fn softmax(z: &Array2<f64>) -> Array2<f64> {
    let mut p = z.clone();
    for mut col in p.columns_mut() {
        let max = col.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        col.mapv_inplace(|x| (x - max).exp());
        let sum = col.sum();
        col /= sum;
    }
    p
}

/// `log Σ exp(z)` of one column.
pub fn log_sum_exp(z: ndarray::ArrayView1<f64>) -> f64 {
    let max = z.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    max + z.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Loss Hessian with respect to the logits applied to `r`: `O⊙r − O·(Oᵀr)`
/// for softmax outputs, `r` for linear outputs.
pub fn hsigma_multiply(mode: OutputMode, o: &[f64], r: &[f64]) -> Vec<f64> {
    match mode {
        OutputMode::LinearMse => r.to_vec(),
        OutputMode::SoftmaxXent => {
            let dot: f64 = o.iter().zip(r).map(|(a, b)| a * b).sum();
            o.iter().zip(r).map(|(oi, ri)| oi * ri - oi * dot).collect()
        }
    }
}

fn hsigma_columns(mode: OutputMode, o: &Array2<f64>, r: &Array2<f64>) -> Array2<f64> {
    match mode {
        OutputMode::LinearMse => r.clone(),
        OutputMode::SoftmaxXent => {
            let mut out = o * r;
            let dots = out.sum_axis(Axis(0));
            Zip::from(&mut out)
                .and(o)
                .and_broadcast(&dots)
                .for_each(|y, &oi, &d| *y -= oi * d);
            out
        }
    }
}

/// Activations retained by [`Model::forward`].
#[derive(Debug, Clone)]
pub struct ActivationCache {
    pub initial: State,
    /// Every timestep, when stored in full.
    pub steps: Vec<Step>,
    /// Network outputs `O(t)` (probabilities or linear values), when stored
    /// in full.
    pub outputs: Vec<Array2<f64>>,
    /// `(t, state before step t)` at segment starts, when checkpointing.
    pub checkpoints: Vec<(usize, State)>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub cache: ActivationCache,
    /// Mean per-target loss in nats.
    pub loss: f64,
    /// `loss / ln 2`; meaningful for softmax outputs.
    pub bits_per_char: f64,
}

/// Memory instrumentation of a checkpointed backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CheckpointStats {
    pub interval: usize,
    /// Segment-start states stored by the forward sweep.
    pub stored_states: usize,
    /// Largest number of recurrent states held at once.
    pub peak_retained: usize,
}

/// A model architecture bound to its parameter layout.
pub struct Model {
    config: ModelConfig,
    layout: Layout,
    cell: Box<dyn Cell>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("parameters", &self.layout.len())
            .finish()
    }
}

struct Sums {
    grad: Vec<Array2<f64>>,
    loss: f64,
}

impl Model {
    pub fn new(config: &ModelConfig) -> Result<Model> {
        let layout = Layout::new(config)?;
        let h = config.hidden();
        let cell: Box<dyn Cell> = match config.architecture {
            Architecture::Rnn => Box::new(rnn::RnnCell::new(&layout, h)),
            Architecture::Lstm => Box::new(lstm::LstmCell::new(&layout, h)),
            Architecture::Mrnn => Box::new(mrnn::MrnnCell::new(&layout, h)),
            Architecture::StackedMrnn => Box::new(stacked::StackedCell::new(&layout, &config.hidden_sizes)),
            Architecture::Mlstm => Box::new(mlstm::MlstmCell::new(&layout, h)),
        };
        Ok(Model {
            config: config.clone(),
            layout,
            cell,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn parameter_count(&self) -> usize {
        self.layout.len()
    }

    /// Row count of each recurrent state part.
    pub fn state_rows(&self) -> Vec<usize> {
        self.cell.state_rows()
    }

    /// Names of the per-step intermediates in [`Step::aux`].
    pub fn aux_names(&self) -> Vec<String> {
        self.cell.aux_names()
    }

    /// All-zero recurrent state for `n` sequences.
    pub fn initial_state(&self, n: usize) -> State {
        State::zeros(&self.cell.state_rows(), n)
    }

    /// Indices of the state parts penalized by structural damping.
    pub fn damped_parts(&self, target: StructuralTarget) -> Vec<usize> {
        self.cell.damped_parts(target)
    }

    /// Advances one timestep.
    pub fn step(&self, theta: &[f64], prev: &State, x: &StepInput) -> Result<Step> {
        self.layout.check_len("step parameters", theta.len())?;
        let w = self.layout.views(theta);
        Ok(self.cell.step(&w, prev, x))
    }

    /// Network outputs for a logit matrix.
    pub fn outputs(&self, logits: &Array2<f64>) -> Array2<f64> {
        match self.config.output_mode {
            OutputMode::SoftmaxXent => softmax(logits),
            OutputMode::LinearMse => logits.clone(),
        }
    }

    fn check(&self, theta: &[f64], batch: &Batch) -> Result<()> {
        self.layout.check_len("parameter vector", theta.len())?;
        batch.validate(&self.config)
    }

    /// Summed loss of step `t` and, when `want_delta`, ∂loss/∂logits.
    fn step_loss(&self, batch: &Batch, t: usize, z: &Array2<f64>, want_delta: bool) -> (f64, Option<Array2<f64>>) {
        if !batch.has_target(t) {
            return (0.0, None);
        }
        match (&batch.targets, self.config.output_mode) {
            (Targets::Symbols(_), OutputMode::SoftmaxXent) => {
                let ys = batch.target_symbols(t).expect("symbol targets");
                let mut loss = 0.0;
                for (j, &y) in ys.iter().enumerate() {
                    loss += log_sum_exp(z.column(j)) - z[[y as usize, j]];
                }
                let delta = want_delta.then(|| {
                    let mut d = softmax(z);
                    for (j, &y) in ys.iter().enumerate() {
                        d[[y as usize, j]] -= 1.0;
                    }
                    d
                });
                (loss, delta)
            }
            (Targets::Symbols(_), OutputMode::LinearMse) => {
                let ys = batch.target_symbols(t).expect("symbol targets");
                let mut d = z.clone();
                for (j, &y) in ys.iter().enumerate() {
                    d[[y as usize, j]] -= 1.0;
                }
                let loss = 0.5 * d.iter().map(|x| x * x).sum::<f64>();
                (loss, want_delta.then_some(d))
            }
            (Targets::Dense { values, .. }, _) => {
                let d = z - &values[t];
                let loss = 0.5 * d.iter().map(|x| x * x).sum::<f64>();
                (loss, want_delta.then_some(d))
            }
        }
    }

    fn checked_step(&self, w: &[ArrayView2<f64>], prev: &State, x: &StepInput, t: usize) -> Result<Step> {
        let step = self.cell.step(w, prev, x);
        if !step.state.is_finite() {
            return Err(Error::NonFinite {
                quantity: "hidden state",
                timestep: t,
            });
        }
        if !step.logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "network output",
                timestep: t,
            });
        }
        Ok(step)
    }

    /// Runs timesteps `range` from `state`, optionally keeping every step.
    fn run(
        &self,
        w: &[ArrayView2<f64>],
        batch: &Batch,
        range: Range<usize>,
        mut state: State,
        keep: bool,
    ) -> Result<(Vec<Step>, f64, State)> {
        let mut steps = Vec::with_capacity(if keep { range.len() } else { 0 });
        let mut loss = 0.0;
        for t in range {
            let step = {
                let prev = steps.last().map_or(&state, |s: &Step| &s.state);
                self.checked_step(w, prev, &batch.input(t), t)?
            };
            loss += self.step_loss(batch, t, &step.logits, false).0;
            if keep {
                steps.push(step);
            } else {
                state = step.state;
            }
        }
        if let Some(last) = steps.last() {
            state = last.state.clone();
        }
        Ok((steps, loss, state))
    }

    /// Forward pass over the whole batch. With a nonzero checkpoint interval
    /// only segment-start states are kept.
    pub fn forward(&self, theta: &[f64], batch: &Batch, options: EvalOptions) -> Result<Forward> {
        self.check(theta, batch)?;
        let w = self.layout.views(theta);
        let initial = self.initial_state(batch.sequences);
        let count = batch.target_count().max(1) as f64;
        let k = options.checkpoint_interval;
        let (cache, loss) = if k == 0 {
            let (steps, loss, _) = self.run(&w, batch, 0..batch.steps, initial.clone(), true)?;
            let outputs = steps.iter().map(|s| self.outputs(&s.logits)).collect();
            let cache = ActivationCache {
                initial,
                steps,
                outputs,
                checkpoints: Vec::new(),
            };
            (cache, loss)
        } else {
            let mut state = initial.clone();
            let mut checkpoints = Vec::new();
            let mut loss = 0.0;
            for t0 in (0..batch.steps).step_by(k) {
                checkpoints.push((t0, state.clone()));
                let (_, l, s) = self.run(&w, batch, t0..(t0 + k).min(batch.steps), state, false)?;
                loss += l;
                state = s;
            }
            let cache = ActivationCache {
                initial,
                steps: Vec::new(),
                outputs: Vec::new(),
                checkpoints,
            };
            (cache, loss)
        };
        Ok(Forward {
            cache,
            loss: loss / count,
            bits_per_char: bits(loss / count),
        })
    }

    fn chunks<'b>(batch: &'b Batch, workers: usize) -> Vec<Cow<'b, Batch>> {
        let ranges = chunk_ranges(batch.sequences, workers);
        if ranges.len() <= 1 {
            vec![Cow::Borrowed(batch)]
        } else {
            ranges.into_iter().map(|r| Cow::Owned(batch.columns(r))).collect()
        }
    }

    /// Mean loss, streamed without storing activations.
    pub fn loss(&self, theta: &[f64], batch: &Batch, options: EvalOptions) -> Result<f64> {
        self.check(theta, batch)?;
        let w = self.layout.views(theta);
        let chunks = Self::chunks(batch, options.workers);
        let sums = parallel::try_map_indexed(chunks.len(), |i| {
            let b = &chunks[i];
            self.run(&w, b, 0..b.steps, self.initial_state(b.sequences), false)
                .map(|r| r.1)
        })?;
        Ok(sums.iter().sum::<f64>() / batch.target_count().max(1) as f64)
    }

    /// Runs the batch from a given state and returns the summed (not mean)
    /// loss with the final state, for streaming evaluation across
    /// contiguous windows.
    pub fn loss_from(&self, theta: &[f64], batch: &Batch, state: State) -> Result<(f64, State)> {
        self.check(theta, batch)?;
        let w = self.layout.views(theta);
        let (_, loss, state) = self.run(&w, batch, 0..batch.steps, state, false)?;
        Ok((loss, state))
    }

    fn zero_logit_delta(&self, n: usize) -> Array2<f64> {
        Array2::zeros((self.config.output_width(), n))
    }

    /// Back-propagates through `steps`, which cover timesteps starting at
    /// `t0` and follow `prev0`.
    #[allow(clippy::too_many_arguments)]
    fn back_segment(
        &self,
        w: &[ArrayView2<f64>],
        g: &mut [Array2<f64>],
        batch: &Batch,
        t0: usize,
        prev0: &State,
        steps: &[Step],
        carry: &mut State,
    ) {
        for i in (0..steps.len()).rev() {
            let t = t0 + i;
            let prev = if i == 0 { prev0 } else { &steps[i - 1].state };
            let dz = self
                .step_loss(batch, t, &steps[i].logits, true)
                .1
                .unwrap_or_else(|| self.zero_logit_delta(batch.sequences));
            self.cell.back_step(w, g, prev, &batch.input(t), &steps[i], &dz, carry);
        }
    }

    fn gradient_full(&self, w: &[ArrayView2<f64>], batch: &Batch) -> Result<Sums> {
        let initial = self.initial_state(batch.sequences);
        let (steps, loss, _) = self.run(w, batch, 0..batch.steps, initial.clone(), true)?;
        let mut grad = self.layout.zeros();
        let mut carry = initial.clone();
        self.back_segment(w, &mut grad, batch, 0, &initial, &steps, &mut carry);
        Ok(Sums { grad, loss })
    }

    fn gradient_checkpointed(&self, w: &[ArrayView2<f64>], batch: &Batch, k: usize) -> Result<(Sums, CheckpointStats)> {
        let initial = self.initial_state(batch.sequences);
        let mut checkpoints = Vec::new();
        let mut state = initial.clone();
        let mut loss = 0.0;
        for t0 in (0..batch.steps).step_by(k) {
            checkpoints.push((t0, state.clone()));
            let (_, l, s) = self.run(w, batch, t0..(t0 + k).min(batch.steps), state, false)?;
            loss += l;
            state = s;
        }
        let mut stats = CheckpointStats {
            interval: k,
            stored_states: checkpoints.len(),
            peak_retained: checkpoints.len(),
        };
        let mut grad = self.layout.zeros();
        let mut carry = initial;
        while let Some((t0, start)) = checkpoints.pop() {
            let t1 = (t0 + k).min(batch.steps);
            let (steps, _, _) = self.run(w, batch, t0..t1, start.clone(), true)?;
            stats.peak_retained = stats.peak_retained.max(checkpoints.len() + 1 + steps.len());
            self.back_segment(w, &mut grad, batch, t0, &start, &steps, &mut carry);
        }
        Ok((Sums { grad, loss }, stats))
    }

    fn reduce(&self, sums: Vec<Sums>, count: usize) -> Result<(Vec<f64>, f64)> {
        let mut iter = sums.into_iter();
        let first = iter.next().expect("at least one chunk");
        let (mut grad, mut loss) = (first.grad, first.loss);
        for s in iter {
            for (a, b) in grad.iter_mut().zip(&s.grad) {
                *a += b;
            }
            loss += s.loss;
        }
        let scale = 1.0 / count.max(1) as f64;
        let mut flat = self.layout.flatten(&grad)?;
        flat.iter_mut().for_each(|x| *x *= scale);
        Ok((flat, loss * scale))
    }

    /// Mean-loss gradient and the mean loss.
    pub fn gradient(&self, theta: &[f64], batch: &Batch, options: EvalOptions) -> Result<(Vec<f64>, f64)> {
        if options.checkpoint_interval > 0 {
            return self
                .checkpointed_gradient(theta, batch, options.checkpoint_interval, options.workers)
                .map(|(g, l, _)| (g, l));
        }
        self.check(theta, batch)?;
        let w = self.layout.views(theta);
        let chunks = Self::chunks(batch, options.workers);
        let sums = parallel::try_map_indexed(chunks.len(), |i| self.gradient_full(&w, &chunks[i]))?;
        self.reduce(sums, batch.target_count())
    }

    /// Gradient computed with `⌈T/k⌉` stored states and segment-wise
    /// recomputation in reverse segment order.
    pub fn checkpointed_gradient(
        &self,
        theta: &[f64],
        batch: &Batch,
        k: usize,
        workers: usize,
    ) -> Result<(Vec<f64>, f64, CheckpointStats)> {
        self.check(theta, batch)?;
        if k == 0 || k > batch.steps {
            return Err(Error::config(format!(
                "checkpoint interval {k} must lie in 1..={}",
                batch.steps
            )));
        }
        let w = self.layout.views(theta);
        let chunks = Self::chunks(batch, workers);
        let results = parallel::try_map_indexed(chunks.len(), |i| self.gradient_checkpointed(&w, &chunks[i], k))?;
        let mut stats = CheckpointStats {
            interval: k,
            ..Default::default()
        };
        let mut sums = Vec::with_capacity(results.len());
        for (s, st) in results {
            stats.stored_states = stats.stored_states.max(st.stored_states);
            stats.peak_retained = stats.peak_retained.max(st.peak_retained);
            sums.push(s);
        }
        let (g, l) = self.reduce(sums, batch.target_count())?;
        Ok((g, l, stats))
    }

    /// Frobenius norms of `∂H(T)/∂H(T−n)` for `n = 1..T` on a single `rnn`
    /// input sequence, by repeated Jacobian products.
    pub fn hidden_jacobian_norms(&self, theta: &[f64], inputs: &[u32]) -> Result<Vec<f64>> {
        if self.config.architecture != Architecture::Rnn {
            return Err(Error::config("hidden Jacobian diagnostic is defined for rnn only"));
        }
        let batch = Batch::symbols(inputs.len(), 1, inputs.to_vec(), inputs.to_vec())?;
        self.check(theta, &batch)?;
        let w = self.layout.views(theta);
        let (steps, _, _) = self.run(&w, &batch, 0..batch.steps, self.initial_state(1), true)?;
        let whh = &w[self.layout.expect("W_hh")];
        let h = self.config.hidden();
        let mut p = Array2::<f64>::eye(h);
        let mut norms = Vec::with_capacity(steps.len());
        for step in steps.iter().rev() {
            // P ← P · diag(1 − h²) · W_hh
            let hs = step.state.0[0].column(0);
            let mut scaled = p.clone();
            for (mut col, &hv) in scaled.columns_mut().into_iter().zip(hs.iter()) {
                col *= 1.0 - hv * hv;
            }
            p = scaled.dot(whh);
            norms.push(p.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
        Ok(norms)
    }
}

/// Forward activations, damping weights and batch for repeated curvature
/// products at a fixed parameter vector.
pub struct CurvatureContext<'a> {
    model: &'a Model,
    theta: &'a [f64],
    batch: &'a Batch,
    /// Structural damping weight `μ`.
    pub mu: f64,
    /// Tikhonov damping weight `λ`.
    pub lambda: f64,
    pub structural_target: StructuralTarget,
    chunks: Vec<(Cow<'a, Batch>, ActivationCache)>,
    loss: f64,
}

impl<'a> CurvatureContext<'a> {
    pub fn new(
        model: &'a Model,
        theta: &'a [f64],
        batch: &'a Batch,
        mu: f64,
        lambda: f64,
        workers: usize,
    ) -> Result<Self> {
        if !(mu.is_finite() && mu >= 0.0 && lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::config(format!(
                "damping weights must be finite and non-negative (mu = {mu}, lambda = {lambda})"
            )));
        }
        model.check(theta, batch)?;
        let parts = Model::chunks(batch, workers);
        let caches =
            parallel::try_map_indexed(parts.len(), |i| model.forward(theta, &parts[i], EvalOptions::default()))?;
        let mut loss = 0.0;
        let chunks = parts
            .into_iter()
            .zip(caches)
            .map(|(b, f)| {
                loss += f.loss * b.target_count() as f64;
                (b, f.cache)
            })
            .collect();
        Ok(CurvatureContext {
            model,
            theta,
            batch,
            mu,
            lambda,
            structural_target: StructuralTarget::default(),
            chunks,
            loss: loss / batch.target_count().max(1) as f64,
        })
    }

    pub fn with_structural_target(mut self, target: StructuralTarget) -> Self {
        self.structural_target = target;
        self
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn theta(&self) -> &[f64] {
        self.theta
    }

    pub fn batch(&self) -> &Batch {
        self.batch
    }

    /// Mean loss at `θ` on the curvature batch.
    pub fn loss(&self) -> f64 {
        self.loss
    }

    fn check_v(&self, v: &[f64]) -> Result<()> {
        self.model.layout.check_len("curvature direction", v.len())
    }

    /// `(R(state), R(logits))` per timestep for one chunk.
    fn r_chunk(
        &self,
        w: &[ArrayView2<f64>],
        v: &[ArrayView2<f64>],
        batch: &Batch,
        cache: &ActivationCache,
    ) -> Vec<(State, Array2<f64>)> {
        let mut out: Vec<(State, Array2<f64>)> = Vec::with_capacity(batch.steps);
        let zero = self.model.initial_state(batch.sequences);
        for t in 0..batch.steps {
            let prev = if t == 0 {
                &cache.initial
            } else {
                &cache.steps[t - 1].state
            };
            let rprev = out.last().map_or(&zero, |r| &r.0);
            let r = self
                .model
                .cell
                .r_step(w, v, prev, rprev, &batch.input(t), &cache.steps[t]);
            out.push(r);
        }
        out
    }

    /// Directional derivatives `R(O(t))` of the network outputs along `v`.
    pub fn r_forward(&self, v: &[f64]) -> Result<Vec<Array2<f64>>> {
        self.check_v(v)?;
        let layout = &self.model.layout;
        let (w, vv) = (layout.views(self.theta), layout.views(v));
        let mode = self.model.config.output_mode;
        let per_chunk = parallel::map_indexed(self.chunks.len(), |i| {
            let (b, cache) = &self.chunks[i];
            self.r_chunk(&w, &vv, b, cache)
                .into_iter()
                .zip(&cache.outputs)
                .map(|((_, rz), o)| hsigma_columns(mode, o, &rz))
                .collect::<Vec<_>>()
        });
        Ok(join_columns(per_chunk, self.batch.steps))
    }

    /// Directional derivatives of every recurrent state part along `v`.
    pub fn r_states(&self, v: &[f64]) -> Result<Vec<State>> {
        self.check_v(v)?;
        let layout = &self.model.layout;
        let (w, vv) = (layout.views(self.theta), layout.views(v));
        let per_chunk = parallel::map_indexed(self.chunks.len(), |i| {
            let (b, cache) = &self.chunks[i];
            self.r_chunk(&w, &vv, b, cache)
                .into_iter()
                .map(|(s, _)| s)
                .collect::<Vec<_>>()
        });
        let parts = self.model.state_rows().len();
        Ok((0..self.batch.steps)
            .map(|t| {
                State(
                    (0..parts)
                        .map(|p| {
                            let views: Vec<_> = per_chunk.iter().map(|c| c[t].0[p].view()).collect();
                            concatenate(Axis(1), &views).expect("chunks share row counts")
                        })
                        .collect(),
                )
            })
            .collect())
    }

    /// Unscaled `Σ Jᵀ·Hσ·R(z)` (when `gauss_newton`) plus `mu·Σ J_hᵀ·R(h)`.
    fn product(&self, v: &[f64], gauss_newton: bool, mu: f64) -> Result<Vec<f64>> {
        self.check_v(v)?;
        let model = self.model;
        let layout = &model.layout;
        let (w, vv) = (layout.views(self.theta), layout.views(v));
        let mode = model.config.output_mode;
        let damped = model.cell.damped_parts(self.structural_target);
        let grads = parallel::map_indexed(self.chunks.len(), |i| {
            let (b, cache) = &self.chunks[i];
            let rs = self.r_chunk(&w, &vv, b, cache);
            let mut g = layout.zeros();
            let mut carry = model.initial_state(b.sequences);
            for t in (0..b.steps).rev() {
                let dz = if gauss_newton && b.has_target(t) {
                    hsigma_columns(mode, &cache.outputs[t], &rs[t].1)
                } else {
                    model.zero_logit_delta(b.sequences)
                };
                if mu != 0.0 {
                    for &p in &damped {
                        carry.0[p].scaled_add(mu, &rs[t].0 .0[p]);
                    }
                }
                let prev = if t == 0 {
                    &cache.initial
                } else {
                    &cache.steps[t - 1].state
                };
                model
                    .cell
                    .back_step(&w, &mut g, prev, &b.input(t), &cache.steps[t], &dz, &mut carry);
            }
            g
        });
        let mut iter = grads.into_iter();
        let mut total = iter.next().expect("at least one chunk");
        for g in iter {
            for (a, b) in total.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let scale = 1.0 / self.batch.target_count().max(1) as f64;
        let mut flat = layout.flatten(&total)?;
        flat.iter_mut().for_each(|x| *x *= scale);
        Ok(flat)
    }

    /// `(G + μ·G_s + λI)·v`.
    pub fn gv_product(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.product(v, true, self.mu)?;
        if self.lambda != 0.0 {
            for (o, x) in out.iter_mut().zip(v) {
                *o += self.lambda * x;
            }
        }
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericFailure("Gauss-Newton product"));
        }
        Ok(out)
    }

    /// `G_s·v`, the Gauss–Newton matrix of the hidden-state-change penalty.
    pub fn structural_gsv(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.product(v, false, 1.0)
    }
}

/// Concatenates per-chunk, per-timestep matrices along the sequence axis.
fn join_columns(per_chunk: Vec<Vec<Array2<f64>>>, steps: usize) -> Vec<Array2<f64>> {
    if per_chunk.len() == 1 {
        return per_chunk.into_iter().next().expect("one chunk");
    }
    (0..steps)
        .map(|t| {
            let views: Vec<_> = per_chunk.iter().map(|c| c[t].view()).collect();
            concatenate(Axis(1), &views).expect("chunks share row counts")
        })
        .collect()
}

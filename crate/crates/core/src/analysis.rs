//! Sampling, the bracket time-lag probe, and streaming evaluation.

use std::collections::BTreeSet;
use std::f64::consts::LN_10;
use std::fmt::Write as _;

use ndarray::Array2;

use crate::config::OutputMode;
use crate::data::{window_starts, Vocabulary};
use crate::error::{Error, Result};
use crate::models::{bits, log_sum_exp, softmax, Batch, Model, State, StepInput};
use crate::rng::Rng;

/// Symbols the probe lets the model emit by default: ASCII letters and space.
pub fn letters_and_space() -> BTreeSet<char> {
    ('a'..='z').chain('A'..='Z').chain([' ']).collect()
}

/// One sampled continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRun {
    pub context: String,
    pub length: usize,
    pub seed: u64,
    pub constraints: Option<BTreeSet<char>>,
    pub text: String,
    /// Unconstrained next-symbol distributions, one per emitted symbol,
    /// when retention was requested.
    pub distributions: Option<Vec<Vec<f64>>>,
}

/// Ids allowed by a constraint set; errors when none are in the vocabulary.
fn allowed_ids(vocab: &Vocabulary, constraints: Option<&BTreeSet<char>>) -> Result<Vec<u32>> {
    match constraints {
        None => Ok((0..vocab.len() as u32).collect()),
        Some(set) => {
            let ids: Vec<u32> = set.iter().filter_map(|&c| vocab.id(c)).collect();
            if ids.is_empty() {
                return Err(Error::config("constraint set shares no symbols with the vocabulary"));
            }
            Ok(ids)
        }
    }
}

fn encode_context(vocab: &Vocabulary, context: &str) -> Vec<u32> {
    context
        .chars()
        .map(|c| {
            vocab.id(c).unwrap_or_else(|| {
                log::warn!("context symbol {c:?} is not in the vocabulary; using the unknown id");
                vocab.unk()
            })
        })
        .collect()
}

fn require_softmax(model: &Model) -> Result<()> {
    if model.config().output_mode != OutputMode::SoftmaxXent {
        return Err(Error::config("sampling needs a softmax_xent model"));
    }
    if model.config().output_width() != model.config().vocab_size {
        return Err(Error::config("sampling needs matching input and output widths"));
    }
    Ok(())
}

/// Draws an id from `column` restricted to `allowed`, renormalized there.
fn draw(column: &[f64], allowed: &[u32], rng: &mut Rng) -> u32 {
    let total: f64 = allowed.iter().map(|&i| column[i as usize]).sum();
    let mut u = rng.uniform() * total;
    for &i in allowed {
        u -= column[i as usize];
        if u < 0.0 {
            return i;
        }
    }
    *allowed.last().expect("non-empty constraint set")
}

/// Runs `n` parallel columns over the same context and returns the state
/// and logits after its last symbol. An empty context leaves zero logits.
fn prime(model: &Model, theta: &[f64], ids: &[u32], n: usize) -> Result<(State, Array2<f64>)> {
    let mut state = model.initial_state(n);
    let mut logits = Array2::zeros((model.config().output_width(), n));
    for &id in ids {
        let step = model.step(theta, &state, &StepInput::Symbols(&vec![id; n]))?;
        state = step.state;
        logits = step.logits;
    }
    Ok((state, logits))
}

/// Feeds `context`, then repeatedly draws the next symbol from the model
/// output (restricted to `constraints` for emission only) and feeds it back.
/// With an empty context the first symbol is drawn uniformly from the
/// allowed set.
#[allow(clippy::too_many_arguments)]
pub fn sample(
    model: &Model,
    theta: &[f64],
    vocab: &Vocabulary,
    context: &str,
    length: usize,
    seed: u64,
    constraints: Option<&BTreeSet<char>>,
    keep_distributions: bool,
) -> Result<SampleRun> {
    require_softmax(model)?;
    if vocab.len() != model.config().vocab_size {
        return Err(Error::Vocabulary(format!(
            "vocabulary has {} ids but the model expects {}",
            vocab.len(),
            model.config().vocab_size
        )));
    }
    let allowed = allowed_ids(vocab, constraints)?;
    let mut rng = Rng::new(seed, 0);
    let (mut state, mut logits) = prime(model, theta, &encode_context(vocab, context), 1)?;
    let mut text = String::with_capacity(length);
    let mut kept = keep_distributions.then(Vec::new);
    for _ in 0..length {
        let p = softmax(&logits);
        let column: Vec<f64> = p.column(0).to_vec();
        if column.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "network output",
                timestep: text.chars().count(),
            });
        }
        let id = draw(&column, &allowed, &mut rng);
        if let Some(k) = kept.as_mut() {
            k.push(column);
        }
        text.push(vocab.decode_id(id));
        let step = model.step(theta, &state, &StepInput::Symbols(&[id]))?;
        state = step.state;
        logits = step.logits;
    }
    Ok(SampleRun {
        context: context.to_string(),
        length,
        seed,
        constraints: constraints.cloned(),
        text,
        distributions: kept,
    })
}

/// Per-step argmax continuation of `context`.
pub fn greedy(model: &Model, theta: &[f64], vocab: &Vocabulary, context: &str, length: usize) -> Result<String> {
    require_softmax(model)?;
    let (mut state, mut logits) = prime(model, theta, &encode_context(vocab, context), 1)?;
    let mut out = String::with_capacity(length);
    for _ in 0..length {
        let col = logits.column(0);
        let id = (0..col.len()).fold(0, |best, i| if col[i] > col[best] { i } else { best }) as u32;
        out.push(vocab.decode_id(id));
        let step = model.step(theta, &state, &StepInput::Symbols(&[id]))?;
        state = step.state;
        logits = step.logits;
    }
    Ok(out)
}

/// `log10 P(a) − log10 P(b)` from a logit column; any shared
/// normalization cancels.
pub fn log10_ratio(logits: &[f64], a: usize, b: usize) -> f64 {
    (logits[a] - logits[b]) / LN_10
}

/// Means over consecutive blocks of `block` values; a short tail is dropped.
pub fn block_means(values: &[f64], block: usize) -> Vec<f64> {
    values
        .chunks_exact(block)
        .map(|c| c.iter().sum::<f64>() / block as f64)
        .collect()
}

/// Settings for [`timelag_probe`].
#[derive(Debug, Clone, PartialEq)]
pub struct TimelagOptions {
    pub experimental: String,
    pub control: String,
    pub steps: usize,
    pub trials: usize,
    pub block: usize,
    pub allowed: BTreeSet<char>,
}

impl Default for TimelagOptions {
    fn default() -> Self {
        TimelagOptions {
            experimental: "[[".into(),
            control: "Th".into(),
            steps: 1000,
            trials: 10,
            block: 10,
            allowed: letters_and_space(),
        }
    }
}

/// Log ratios for one context.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextCurve {
    pub context: String,
    /// Raw `log10 P(']')/P('[')`, one series of `steps` values per trial.
    pub raw: Vec<Vec<f64>>,
    /// Block means per trial.
    pub smoothed: Vec<Vec<f64>>,
    /// Mean across trials of the smoothed series.
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimelagResult {
    pub trials: usize,
    pub steps: usize,
    pub experimental: ContextCurve,
    pub control: ContextCurve,
}

impl TimelagResult {
    /// Tab-separated `block, experimental mean, control mean` rows.
    pub fn tsv(&self) -> String {
        let mut out = String::from("block\texperimental\tcontrol\n");
        for (i, (e, c)) in self.experimental.mean.iter().zip(&self.control.mean).enumerate() {
            let _ = writeln!(out, "{i}\t{e}\t{c}");
        }
        out
    }

    /// Blocks at which the experimental mean exceeds the control mean.
    pub fn blocks_above(&self) -> Vec<bool> {
        self.experimental
            .mean
            .iter()
            .zip(&self.control.mean)
            .map(|(e, c)| e > c)
            .collect()
    }
}

#[allow(clippy::too_many_arguments)]
fn probe_context(
    model: &Model,
    theta: &[f64],
    vocab: &Vocabulary,
    context: &str,
    opts: &TimelagOptions,
    allowed: &[u32],
    seed: u64,
    stream: u64,
) -> Result<ContextCurve> {
    let (close, open) = match (vocab.id(']'), vocab.id('[')) {
        (Some(c), Some(o)) => (c as usize, o as usize),
        _ => {
            return Err(Error::Vocabulary(
                "the probe needs '[' and ']' in the vocabulary".into(),
            ))
        }
    };
    let n = opts.trials;
    let mut rngs: Vec<Rng> = (0..n as u64).map(|j| Rng::new(seed, stream + 2 * j)).collect();
    let (mut state, mut logits) = prime(model, theta, &encode_context(vocab, context), n)?;
    let mut raw = vec![Vec::with_capacity(opts.steps); n];
    let mut ids = vec![0u32; n];
    for t in 0..opts.steps {
        for j in 0..n {
            let col: Vec<f64> = logits.column(j).to_vec();
            let r = log10_ratio(&col, close, open);
            if !r.is_finite() {
                return Err(Error::NonFinite {
                    quantity: "network output",
                    timestep: t,
                });
            }
            raw[j].push(r);
            let lse = log_sum_exp(logits.column(j));
            let p: Vec<f64> = col.iter().map(|z| (z - lse).exp()).collect();
            ids[j] = draw(&p, allowed, &mut rngs[j]);
        }
        let step = model.step(theta, &state, &StepInput::Symbols(&ids))?;
        state = step.state;
        logits = step.logits;
    }
    let smoothed: Vec<Vec<f64>> = raw.iter().map(|r| block_means(r, opts.block)).collect();
    let blocks = opts.steps / opts.block;
    let mean = (0..blocks)
        .map(|b| smoothed.iter().map(|s| s[b]).sum::<f64>() / n as f64)
        .collect();
    Ok(ContextCurve {
        context: context.to_string(),
        raw,
        smoothed,
        mean,
    })
}

/// Samples continuations of the experimental and control contexts under
/// the emission constraint and records the unconstrained bracket log ratio
/// before every emitted symbol. Trials run as parallel columns, each with
/// its own random stream.
pub fn timelag_probe(
    model: &Model,
    theta: &[f64],
    vocab: &Vocabulary,
    opts: &TimelagOptions,
    seed: u64,
) -> Result<TimelagResult> {
    require_softmax(model)?;
    if opts.block == 0 || opts.steps == 0 || !opts.steps.is_multiple_of(opts.block) {
        return Err(Error::config(
            "probe steps must be a positive multiple of the block size",
        ));
    }
    if opts.trials == 0 {
        return Err(Error::config("probe needs at least one trial"));
    }
    let allowed = allowed_ids(vocab, Some(&opts.allowed))?;
    let experimental = probe_context(model, theta, vocab, &opts.experimental, opts, &allowed, seed, 0)?;
    let control = probe_context(model, theta, vocab, &opts.control, opts, &allowed, seed, 1)?;
    Ok(TimelagResult {
        trials: opts.trials,
        steps: opts.steps,
        experimental,
        control,
    })
}

/// Mean bits/char over `ids`, predicting every symbol after the first
/// exactly once. The split is cut into `streams` contiguous pieces run as
/// parallel columns; each piece is walked in windows of `steps` with the
/// recurrent state carried across windows.
pub fn streaming_bits(model: &Model, theta: &[f64], ids: &[u32], steps: usize, streams: usize) -> Result<f64> {
    if streams == 0 {
        return Err(Error::config("streams must be positive"));
    }
    let piece = (ids.len().saturating_sub(1)) / streams;
    if piece == 0 {
        return Err(Error::config("split too short for the requested streams"));
    }
    let steps = steps.min(piece).max(1);
    let mut state = model.initial_state(streams);
    let mut loss = 0.0;
    let mut count = 0usize;
    let mut s = 0;
    while s < piece {
        let len = steps.min(piece - s);
        let mut inputs = vec![0; len * streams];
        let mut targets = vec![0; len * streams];
        for j in 0..streams {
            let base = j * piece + s;
            for t in 0..len {
                inputs[t * streams + j] = ids[base + t];
                targets[t * streams + j] = ids[base + t + 1];
            }
        }
        let batch = Batch::symbols(len, streams, inputs, targets)?;
        let (l, next) = model.loss_from(theta, &batch, state)?;
        loss += l;
        count += len * streams;
        state = next;
        s += len;
    }
    Ok(bits(loss / count as f64))
}

/// Mean bits/char over independent windows (no state carried), the
/// quantity the training loop reports.
pub fn window_bits(model: &Model, theta: &[f64], ids: &[u32], steps: usize, workers: usize) -> Result<f64> {
    let starts = window_starts(ids.len(), steps, steps)?;
    let batch = crate::data::batch_from_windows(ids, steps, &starts)?;
    let loss = model.loss(
        theta,
        &batch,
        crate::models::EvalOptions::default().with_workers(workers),
    )?;
    Ok(bits(loss))
}

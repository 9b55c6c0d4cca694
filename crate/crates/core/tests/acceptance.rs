//! Acceptance suite: one pass/fail line per criterion.
//!
//! Run with `cargo test -p hfseq --test acceptance`. Positional arguments
//! filter criteria by substring of their key. `HFSEQ_TEXT_CORPUS` points
//! the real-text criteria at a different corpus, and
//! `HFSEQ_REAL_TEXT_SECONDS` overrides the one-hour real-text budget.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hfseq::analysis::{timelag_probe, window_bits, TimelagOptions};
use hfseq::data::{
    curvature_indices, gen_synthetic, load_corpus, make_batches, unigram_entropy, SplitSpec, SyntheticTask, Vocabulary,
    WindowSelection, BRACKET_FILLER,
};
use hfseq::models::{Batch, CurvatureContext, EvalOptions, Model, StructuralTarget};
use hfseq::optimizer::{
    adjust_mu, conjugate_gradient, progress_stalled, train, CgOptions, DampingMode, DampingState, HfOptions, MuRule,
    NoHook, StopReason, TrainOptions, TrainState,
};
use hfseq::verify::{self, OracleReport};
use hfseq::{init_params, Architecture, InitScheme, ModelConfig, OutputMode, Result, Rng};
use nalgebra::{DMatrix, DVector};

const DEFAULT_CORPUS: &str = "/usr/lib/python3.10/pydoc_data/topics.py";

struct Outcome {
    passed: bool,
    /// Report-only criteria never fail the suite.
    gating: bool,
    detail: String,
}

impl Outcome {
    fn check(passed: bool, detail: String) -> Self {
        Outcome {
            passed,
            gating: true,
            detail,
        }
    }
}

type Criterion = (&'static str, &'static str, fn() -> Result<Outcome>);

const CRITERIA: [Criterion; 13] = [
    (
        "gradient",
        "analytic gradient vs central differences",
        gradient_correctness,
    ),
    (
        "curvature",
        "Gauss-Newton and structural products vs dense oracles",
        curvature_correctness,
    ),
    (
        "identity",
        "damped product decomposes into its parts",
        identity_decomposition,
    ),
    ("cg", "conjugate gradient vs direct solve and stop rule", cg_criterion),
    (
        "checkpoint",
        "checkpointed backward equals full storage",
        checkpoint_criterion,
    ),
    ("adjust_mu", "piecewise mu update", adjust_mu_criterion),
    (
        "periodic",
        "rnn and mlstm learn a periodic sequence",
        periodic_criterion,
    ),
    (
        "marked_addition",
        "lstm solves marked addition",
        marked_addition_criterion,
    ),
    (
        "real_text",
        "mlstm beats unigram entropy on real text",
        real_text_criterion,
    ),
    (
        "ordering",
        "architecture ordering on real text (report only)",
        ordering_criterion,
    ),
    (
        "timelag",
        "bracket time-lag probe separates contexts",
        timelag_criterion,
    ),
    (
        "damping_parity",
        "structural and line-search damping both learn",
        damping_parity_criterion,
    ),
    (
        "determinism",
        "repeated runs reproduce the metrics stream",
        determinism_criterion,
    ),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<_> = CRITERIA
        .iter()
        .enumerate()
        .filter(|(_, (key, _, _))| filters.is_empty() || filters.iter().any(|f| key.contains(f.as_str())))
        .collect();
    let mut failed = 0;
    for (i, (key, title, run)) in &selected {
        let start = Instant::now();
        let outcome = run().unwrap_or_else(|e| Outcome::check(false, format!("error: {e}")));
        let status = match (outcome.passed, outcome.gating) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "NOTE",
        };
        if !outcome.passed && outcome.gating {
            failed += 1;
        }
        println!(
            "[{:>2}/13] {status} {key}: {title}; {} ({:.1}s)",
            i + 1,
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} run, {failed} failed", selected.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn random_vector(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed, 17);
    (0..len).map(|_| rng.normal()).collect()
}

fn random_theta(config: &ModelConfig, std: f64, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed, 3);
    (0..config.parameter_count()).map(|_| std * rng.normal()).collect()
}

fn random_batch(v: usize, t: usize, n: usize, seed: u64) -> Batch {
    let mut rng = Rng::new(seed, 5);
    let ids: Vec<u32> = (0..(t + 1) * n).map(|_| rng.below(v) as u32).collect();
    Batch::symbols(t, n, ids[..t * n].to_vec(), ids[n..].to_vec()).expect("valid batch")
}

fn small_config(arch: Architecture, v: usize, h: usize, mode: OutputMode) -> ModelConfig {
    let mut c = ModelConfig::text(arch, v, h).with_output_mode(mode);
    if arch == Architecture::StackedMrnn {
        c.hidden_sizes = vec![h, h - 1];
    }
    c
}

fn elapsed_within(start: Instant, limit_secs: f64) -> (bool, f64) {
    let secs = start.elapsed().as_secs_f64();
    (secs < limit_secs, secs)
}

fn gradient_correctness() -> Result<Outcome> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    let mut all = true;
    for arch in Architecture::ALL {
        for mode in [OutputMode::SoftmaxXent, OutputMode::LinearMse] {
            let config = small_config(arch, 5, 6, mode);
            let model = Model::new(&config)?;
            let theta = random_theta(&config, 0.5, 1);
            let batch = random_batch(5, 7, 2, 2);
            let (g, _) = model.gradient(&theta, &batch, EvalOptions::default())?;
            let fd = verify::fd_gradient(&model, &theta, &batch, 1e-5)?;
            let report = OracleReport::compare(format!("{arch}/{}", mode.as_str()), &g, &fd, 1e-4);
            all &= report.passed;
            if report.max_rel_error > worst || report.max_rel_error.is_nan() {
                worst = report.max_rel_error;
                worst_name = report.quantity.clone();
            }
        }
    }
    let (fast, secs) = elapsed_within(start, 60.0);
    Ok(Outcome::check(
        all && fast,
        format!("worst max rel err {worst:.2e} ({worst_name}) < 1e-4, {secs:.1}s < 60s"),
    ))
}

fn curvature_correctness() -> Result<Outcome> {
    let start = Instant::now();
    let mut worst_gv = 0.0f64;
    let mut worst_gs = 0.0f64;
    let mut max_params = 0;
    for arch in Architecture::ALL {
        for mode in [OutputMode::SoftmaxXent, OutputMode::LinearMse] {
            let config = small_config(arch, 3, 3, mode);
            let model = Model::new(&config)?;
            max_params = max_params.max(model.parameter_count());
            let theta = random_theta(&config, 0.5, 4);
            let batch = random_batch(3, 4, 2, 5);
            let count = batch.target_count() as f64;
            let target = StructuralTarget::HiddenOutput;
            let g = verify::dense_gauss_newton(&model, &theta, &batch, 0.0, 0.0, target, 1e-5)?;
            let jh = verify::fd_hidden_jacobian(&model, &theta, &batch, target, 1e-5)?;
            let gs = (jh.transpose() * jh) / count;
            let ctx = CurvatureContext::new(&model, &theta, &batch, 0.0, 0.0, 1)?;
            for probe in 0..10 {
                let v = random_vector(theta.len(), probe);
                let e = verify::relative_norm_error(&ctx.gv_product(&v)?, &verify::dense_apply(&g, &v));
                worst_gv = worst_gv.max(if e.is_nan() { f64::INFINITY } else { e });
                let e = verify::relative_norm_error(&ctx.structural_gsv(&v)?, &verify::dense_apply(&gs, &v));
                worst_gs = worst_gs.max(if e.is_nan() { f64::INFINITY } else { e });
            }
        }
    }
    let (fast, secs) = elapsed_within(start, 120.0);
    Ok(Outcome::check(
        worst_gv < 1e-4 && worst_gs < 1e-4 && max_params <= 300 && fast,
        format!(
            "gv rel err {worst_gv:.2e}, gsv rel err {worst_gs:.2e} < 1e-4 over 10 probes, <= {max_params} params, {secs:.1}s < 120s"
        ),
    ))
}

fn identity_decomposition() -> Result<Outcome> {
    let mut worst = 0.0f64;
    for arch in Architecture::ALL {
        let config = small_config(arch, 5, 4, OutputMode::SoftmaxXent);
        let model = Model::new(&config)?;
        let theta = random_theta(&config, 0.5, 6);
        let batch = random_batch(5, 6, 3, 7);
        let v = random_vector(theta.len(), 8);
        let base = CurvatureContext::new(&model, &theta, &batch, 0.0, 0.0, 1)?;
        let gv0 = base.gv_product(&v)?;
        let gsv = base.structural_gsv(&v)?;
        for mu in [0.01, 0.3, 1.0] {
            for lambda in [0.0, 10.0] {
                let ctx = CurvatureContext::new(&model, &theta, &batch, mu, lambda, 1)?;
                let got = ctx.gv_product(&v)?;
                let scale = got.iter().fold(1.0f64, |m, x| m.max(x.abs()));
                for i in 0..v.len() {
                    let want = gv0[i] + mu * gsv[i] + lambda * v[i];
                    worst = worst.max((got[i] - want).abs() / scale);
                }
            }
        }
    }
    Ok(Outcome::check(
        worst < 1e-12,
        format!("max deviation {worst:.2e} (relative to max |gv|, at least 1) < 1e-12"),
    ))
}

/// Minimum of `½xᵀAx + bᵀx` over the `i`-dimensional Krylov space of
/// `(A, b)`, from an orthonormal basis and a dense solve.
fn krylov_minimum(a: &DMatrix<f64>, b: &DVector<f64>, i: usize) -> f64 {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(i);
    for j in 0..i {
        let mut w = if j == 0 { b.clone() } else { a * &basis[j - 1] };
        for _ in 0..2 {
            for u in &basis {
                w -= u * u.dot(&w);
            }
        }
        basis.push(w.normalize());
    }
    let v = DMatrix::from_columns(&basis);
    let h = v.transpose() * a * &v;
    let c = v.transpose() * b;
    let y = h.clone().cholesky().expect("projected matrix is SPD").solve(&(-&c));
    0.5 * y.dot(&(h * &y)) + c.dot(&y)
}

/// Iteration at which the relative-progress rule first fires on the
/// plateau problem, from the Krylov oracle.
const PLATEAU_STOP: usize = 16;

fn plateau_problem() -> (Vec<f64>, Vec<f64>) {
    let mut d = vec![1.0, 2.0, 3.0, 4.0, 5.0];
    d.extend((0..45).map(|j| 1e-3 * (1.0 + j as f64 / 44.0)));
    let mut b = vec![1.0; 5];
    b.extend([1e-3; 45]);
    (d, b)
}

fn cg_criterion() -> Result<Outcome> {
    // Dense SPD 50×50 against a Cholesky solve.
    let n = 50;
    let mut rng = Rng::new(21, 0);
    let m = DMatrix::from_fn(n, n, |_, _| rng.normal());
    let a = &m * m.transpose() / n as f64 + DMatrix::identity(n, n);
    let b: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let opts = CgOptions {
        max_iters: 200,
        // Longer than the run, so only the residual test can stop it.
        progress_window: 1000,
        residual_tol: 1e-14,
        ..CgOptions::default()
    };
    let out = conjugate_gradient(|v: &[f64]| Ok(verify::dense_apply(&a, v)), &b, None, &opts, &mut NoHook)?;
    let direct = verify::cg_direct_solve(&a, &b)?;
    let err = out
        .x
        .iter()
        .zip(&direct)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let monotone = out.trace.q.windows(2).all(|w| w[1] <= w[0]);

    // Plateau spectrum: the progress rule must fire where the oracle says.
    let (d, pb) = plateau_problem();
    let dense = DMatrix::from_diagonal(&DVector::from_column_slice(&d));
    let bv = DVector::from_column_slice(&pb);
    let mut q = vec![0.0];
    let mut oracle_stop = None;
    for i in 1..=30 {
        q.push(krylov_minimum(&dense, &bv, i));
        if oracle_stop.is_none() && progress_stalled(&q, 10, 0.0005) {
            oracle_stop = Some(i);
        }
    }
    let plateau = conjugate_gradient(
        |v: &[f64]| Ok(v.iter().zip(&d).map(|(x, s)| x * s).collect()),
        &pb,
        None,
        &CgOptions::default(),
        &mut NoHook,
    )?;
    let stop_ok = plateau.reason == StopReason::Progress
        && plateau.trace.iterations() == PLATEAU_STOP
        && oracle_stop == Some(PLATEAU_STOP);
    Ok(Outcome::check(
        err < 1e-8 && monotone && stop_ok,
        format!(
            "max |x - x_direct| {err:.2e} < 1e-8, q monotone: {monotone}, plateau stop at {} ({}) with oracle {:?}, expected {PLATEAU_STOP}",
            plateau.trace.iterations(),
            plateau.reason,
            oracle_stop
        ),
    ))
}

fn checkpoint_criterion() -> Result<Outcome> {
    let t = 100;
    let k = EvalOptions::sqrt_interval(t);
    let bound = t.div_ceil(k) + k;
    let mut worst = 0.0f64;
    let mut peak = 0;
    for arch in Architecture::ALL {
        let config = small_config(arch, 6, 5, OutputMode::SoftmaxXent);
        let model = Model::new(&config)?;
        let theta = random_theta(&config, 0.4, 9);
        let batch = random_batch(6, t, 3, 10);
        let (full, _) = model.gradient(&theta, &batch, EvalOptions::default())?;
        let (ck, _, stats) = model.checkpointed_gradient(&theta, &batch, k, 1)?;
        let scale = full.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let diff = full.iter().zip(&ck).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        worst = worst.max(diff);
        peak = peak.max(stats.peak_retained);
    }
    Ok(Outcome::check(
        worst < 1e-12 && peak <= bound,
        format!("T={t}, k={k}: max deviation {worst:.2e} < 1e-12, peak stored states {peak} <= {bound}"),
    ))
}

fn adjust_mu_criterion() -> Result<Outcome> {
    let expected = [(0.1, 2.0 / 3.0), (0.25, 1.0), (0.5, 1.0), (0.75, 1.0), (0.9, 1.5)];
    let state = DampingState::new(DampingMode::Structural, 0.3, 0.0)?;
    let mut ok = true;
    let mut seen = Vec::new();
    for (p, factor) in expected {
        let next = adjust_mu(state, -2.0 * p, 0.0, -2.0, 0.0)?;
        let got = next.mu / state.mu;
        seen.push(format!("{p}->{got:.4}"));
        ok &= (got - factor).abs() < 1e-15;
    }
    Ok(Outcome::check(ok, format!("factors {}", seen.join(", "))))
}

fn hf_options() -> HfOptions {
    HfOptions::default()
}

fn damping(mode: DampingMode, mu: f64, lambda: f64) -> Result<DampingState> {
    Ok(DampingState::new(mode, mu, lambda)?.with_rule(MuRule::Classic))
}

/// Trains on a fixed batch until the training loss drops below `target`
/// bits or `iterations` run out. Returns final train bits, iterations run,
/// and whether every update left the batch loss no higher.
fn train_fixed(
    model: &Model,
    theta: Vec<f64>,
    damping: DampingState,
    batch: &Batch,
    iterations: usize,
    target: f64,
) -> Result<(f64, usize, bool)> {
    let mut state = TrainState::new(theta, damping);
    let opts = TrainOptions {
        max_iterations: iterations,
        patience: usize::MAX,
        stop_below_bits: Some(target),
        ..TrainOptions::default()
    };
    let all: Vec<usize> = (0..batch.sequences).collect();
    let mut monotone = true;
    let mut last = f64::INFINITY;
    train(
        model,
        &mut state,
        &hf_options(),
        &opts,
        |_| Ok((batch.clone(), all.clone())),
        |_| Ok(None),
        |_, m| {
            monotone &= m.train_bits <= last;
            last = m.train_bits;
            Ok(())
        },
    )?;
    let bits = state.history.last().map_or(f64::INFINITY, |m| m.train_bits);
    Ok((bits, state.iteration, monotone))
}

fn periodic_batch() -> Result<(usize, Batch)> {
    let task = SyntheticTask::PeriodicText {
        period: "abcdefgh".into(),
        steps: 24,
    };
    let v = task.vocabulary().expect("text task").len();
    Ok((v, gen_synthetic(&task, 8, &mut Rng::new(1, 1))?))
}

fn periodic_criterion() -> Result<Outcome> {
    let start = Instant::now();
    let (v, batch) = periodic_batch()?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (arch, mu) in [(Architecture::Rnn, 0.01), (Architecture::Mlstm, 0.1)] {
        let config = ModelConfig::text(arch, v, 16).with_seed(1);
        let model = Model::new(&config)?;
        let theta = init_params(&config, InitScheme::sparse_recurrent(), &mut Rng::new(1, 0))?.theta;
        let (bits, iters, _) = train_fixed(
            &model,
            theta,
            damping(DampingMode::Structural, mu, 0.0)?,
            &batch,
            30,
            0.1,
        )?;
        ok &= bits < 0.1;
        parts.push(format!("{arch} {bits:.4} bits after {iters} iterations"));
    }
    let (fast, secs) = elapsed_within(start, 300.0);
    Ok(Outcome::check(
        ok && fast,
        format!("{} (< 0.1 within 30), {secs:.1}s < 300s", parts.join(", ")),
    ))
}

fn marked_addition_criterion() -> Result<Outcome> {
    let start = Instant::now();
    let task = SyntheticTask::MarkedAddition { steps: 30 };
    let mut config = ModelConfig::text(Architecture::Lstm, 2, 20)
        .with_output_mode(OutputMode::LinearMse)
        .with_seed(1);
    config.output_size = Some(1);
    config.extra_biases = true;
    let model = Model::new(&config)?;
    let theta = init_params(&config, InitScheme::Dense { std: 0.1 }, &mut Rng::new(1, 0))?.theta;
    let mut state = TrainState::new(theta, damping(DampingMode::Structural, 0.1, 0.0)?);
    let held_out = gen_synthetic(&task, 500, &mut Rng::new(1, 999))?;
    let n = 400;
    let opts = TrainOptions {
        max_iterations: 100,
        patience: usize::MAX,
        stop_below_val: Some(0.01),
        ..TrainOptions::default()
    };
    let mut best = f64::INFINITY;
    train(
        &model,
        &mut state,
        &hf_options(),
        &opts,
        |i| {
            Ok((
                gen_synthetic(&task, n, &mut Rng::new(1, 10 + i as u64))?,
                (0..n / 4).collect(),
            ))
        },
        |theta| {
            // Loss is ½ squared error per target; MSE is twice that.
            let mse = 2.0 * model.loss(theta, &held_out, EvalOptions::default())?;
            best = best.min(mse);
            Ok(Some(mse))
        },
        |_, _| Ok(()),
    )?;
    let last = state.history.last().and_then(|m| m.val_bits).unwrap_or(f64::INFINITY);
    let (fast, secs) = elapsed_within(start, 1200.0);
    Ok(Outcome::check(
        last < 0.01 && fast,
        format!(
            "held-out MSE {last:.5} < 0.01 after {} of at most 100 iterations, {secs:.1}s < 1200s",
            state.iteration
        ),
    ))
}

fn corpus_path() -> PathBuf {
    std::env::var_os("HFSEQ_TEXT_CORPUS").map_or_else(|| PathBuf::from(DEFAULT_CORPUS), PathBuf::from)
}

struct TextData {
    vocab: Vocabulary,
    train: Vec<u32>,
    validation: Vec<u32>,
    bytes: u64,
}

fn text_data() -> Result<TextData> {
    let path = corpus_path();
    let bytes = std::fs::metadata(&path)?.len();
    let spec = SplitSpec::Fractions {
        train: 0.9,
        validation: 0.05,
        test: 0.05,
    };
    let (vocab, split) = load_corpus(&path, &spec)?;
    Ok(TextData {
        vocab,
        train: split.train,
        validation: split.validation,
        bytes,
    })
}

/// Stochastic-batch HF on text: each iteration draws `budget` characters
/// of windows, and a quarter of them form the curvature batch.
#[allow(clippy::too_many_arguments)]
fn train_text(
    model: &Model,
    train_ids: &[u32],
    validation: &[u32],
    seed: u64,
    mu: f64,
    budget: usize,
    opts: &TrainOptions,
) -> Result<TrainState> {
    let config = model.config();
    let theta = init_params(config, InitScheme::Dense { std: 0.1 }, &mut Rng::new(seed, 0))?.theta;
    let mut state = TrainState::new(theta, damping(DampingMode::Structural, mu, 0.0)?);
    let steps = 100;
    train(
        model,
        &mut state,
        &hf_options(),
        opts,
        |i| {
            let mut rng = Rng::new(seed, 1000 + i as u64);
            let selection = WindowSelection::Budget { characters: budget };
            let batch = make_batches(train_ids, steps, usize::MAX, steps, selection, &mut rng)?.remove(0);
            let curv = curvature_indices(batch.sequences, 0.25, &mut rng)?;
            Ok((batch, curv))
        },
        |theta| Ok(Some(window_bits(model, theta, validation, steps, 1)?)),
        |_, _| Ok(()),
    )?;
    Ok(state)
}

fn real_text_criterion() -> Result<Outcome> {
    let data = text_data()?;
    let entropy = unigram_entropy(&data.validation);
    let seconds = std::env::var("HFSEQ_REAL_TEXT_SECONDS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(3600u64);
    let config = ModelConfig::text(Architecture::Mlstm, data.vocab.len(), 64).with_seed(1);
    let model = Model::new(&config)?;
    let opts = TrainOptions {
        max_iterations: usize::MAX,
        patience: usize::MAX,
        time_limit: Some(Duration::from_secs(seconds)),
        stop_below_val: Some(entropy),
        ..TrainOptions::default()
    };
    let state = train_text(&model, &data.train, &data.validation, 1, 0.1, 50_000, &opts)?;
    let val = state.best_val.unwrap_or(f64::INFINITY);
    Ok(Outcome::check(
        data.bytes >= 500_000 && val < entropy,
        format!(
            "{} ({} bytes, V={}): validation {val:.4} bits/char < unigram {entropy:.4} after {} iterations (budget {seconds}s)",
            corpus_path().display(),
            data.bytes,
            data.vocab.len(),
            state.iteration
        ),
    ))
}

fn ordering_criterion() -> Result<Outcome> {
    let data = text_data()?;
    let v = data.vocab.len();
    let validation = &data.validation[..data.validation.len().min(20_000)];
    let contenders = [
        (Architecture::Mlstm, 32, 0.1),
        (Architecture::Mrnn, 58, 0.3),
        (Architecture::Lstm, 38, 0.1),
    ];
    let opts = TrainOptions {
        max_iterations: 10,
        patience: usize::MAX,
        ..TrainOptions::default()
    };
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 1..=3 {
        let mut finals = Vec::new();
        for (arch, h, mu) in contenders {
            let config = ModelConfig::text(arch, v, h).with_seed(seed);
            let model = Model::new(&config)?;
            let state = train_text(&model, &data.train, validation, seed, mu, 20_000, &opts)?;
            finals.push(state.history.last().and_then(|m| m.val_bits).unwrap_or(f64::INFINITY));
        }
        if finals[0] <= finals[1] && finals[0] <= finals[2] {
            wins += 1;
        }
        rows.push(format!(
            "seed {seed}: {:.3}/{:.3}/{:.3}",
            finals[0], finals[1], finals[2]
        ));
    }
    let params: Vec<usize> = contenders
        .iter()
        .map(|&(a, h, _)| ModelConfig::text(a, v, h).parameter_count())
        .collect();
    Ok(Outcome {
        passed: wins >= 2,
        gating: false,
        detail: format!(
            "mlstm/mrnn/lstm ({}/{}/{} params) validation bits: {}; mlstm best in {wins}/3 (need 2)",
            params[0],
            params[1],
            params[2],
            rows.join("; ")
        ),
    })
}

fn timelag_criterion() -> Result<Outcome> {
    let task = SyntheticTask::BracketLanguage {
        steps: 100,
        span: 100,
        filler: BRACKET_FILLER.into(),
        open_probability: 0.03,
    };
    let vocab = task.vocabulary().expect("text task");
    let mut rng = Rng::new(1, 0);
    let train_ids = vocab.encode(&task.text(0, 500_000, &mut rng)?);
    let validation = vocab.encode(&task.text(1, 20_000, &mut rng)?);
    let config = ModelConfig::text(Architecture::Mlstm, vocab.len(), 24).with_seed(1);
    let model = Model::new(&config)?;
    let opts = TrainOptions {
        max_iterations: 30,
        patience: usize::MAX,
        ..TrainOptions::default()
    };
    let state = train_text(&model, &train_ids, &validation, 1, 0.1, 40_000, &opts)?;
    let probe = TimelagOptions {
        steps: 100,
        trials: 10,
        ..TimelagOptions::default()
    };
    let result = timelag_probe(&model, &state.theta, &vocab, &probe, 5)?;
    let above = result.blocks_above();
    let count = above.iter().filter(|&&b| b).count();
    let margin = result
        .experimental
        .mean
        .iter()
        .zip(&result.control.mean)
        .map(|(e, c)| e - c)
        .fold(f64::INFINITY, f64::min);
    Ok(Outcome::check(
        count == above.len() && above.len() == 10,
        format!(
            "experimental > control in {count}/{} blocks over 100 steps, min margin {margin:.3} (log10), 10 trials",
            above.len()
        ),
    ))
}

fn damping_parity_criterion() -> Result<Outcome> {
    let (v, batch) = periodic_batch()?;
    let config = ModelConfig::text(Architecture::Rnn, v, 16).with_seed(1);
    let model = Model::new(&config)?;
    let theta = init_params(&config, InitScheme::sparse_recurrent(), &mut Rng::new(1, 0))?.theta;
    let (s_bits, s_iters, _) = train_fixed(
        &model,
        theta.clone(),
        damping(DampingMode::Structural, 0.01, 0.0)?,
        &batch,
        30,
        0.1,
    )?;
    let (l_bits, l_iters, monotone) = train_fixed(
        &model,
        theta,
        damping(DampingMode::LineSearch, 0.0, 0.0)?,
        &batch,
        30,
        0.1,
    )?;
    Ok(Outcome::check(
        s_bits < 0.1 && l_bits < 0.1 && monotone,
        format!(
            "structural {s_bits:.4} bits ({s_iters} it), line-search {l_bits:.4} bits ({l_iters} it), line-search loss non-increasing: {monotone}"
        ),
    ))
}

fn determinism_criterion() -> Result<Outcome> {
    let task = SyntheticTask::BracketLanguage {
        steps: 40,
        span: 30,
        filler: BRACKET_FILLER.into(),
        open_probability: 0.05,
    };
    let vocab = task.vocabulary().expect("text task");
    let ids = vocab.encode(&task.text(0, 20_000, &mut Rng::new(2, 0))?);
    let validation = vocab.encode(&task.text(1, 2_000, &mut Rng::new(2, 1))?);
    let run = || -> Result<Vec<String>> {
        let config = ModelConfig::text(Architecture::Mrnn, vocab.len(), 12).with_seed(4);
        let model = Model::new(&config)?;
        let theta = init_params(&config, InitScheme::sparse_recurrent(), &mut Rng::new(4, 0))?.theta;
        let mut state = TrainState::new(theta, DampingState::new(DampingMode::Structural, 0.3, 0.0)?);
        let mut hf = hf_options();
        hf.eval = EvalOptions::default().with_workers(3);
        let opts = TrainOptions {
            max_iterations: 4,
            patience: usize::MAX,
            ..TrainOptions::default()
        };
        train(
            &model,
            &mut state,
            &hf,
            &opts,
            |i| {
                let mut rng = Rng::new(4, 100 + i as u64);
                let sel = WindowSelection::Fraction { fraction: 0.5 };
                let batch = make_batches(&ids, 40, usize::MAX, 40, sel, &mut rng)?.remove(0);
                let curv = curvature_indices(batch.sequences, 0.25, &mut rng)?;
                Ok((batch, curv))
            },
            |theta| Ok(Some(window_bits(&model, theta, &validation, 40, 3)?)),
            |_, _| Ok(()),
        )?;
        Ok(state.history.iter().map(|m| m.tsv()).collect())
    };
    let first = run()?;
    let second = run()?;
    let distinct: BTreeSet<&String> = first.iter().collect();
    Ok(Outcome::check(
        first == second && distinct.len() == first.len(),
        format!(
            "{} metric lines, identical across two runs with 3 workers: {}",
            first.len(),
            first == second
        ),
    ))
}

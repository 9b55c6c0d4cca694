//! The `train` command: run directory, manifest, per-iteration checkpoints
//! and resumption.
//!
//! A run directory holds
//!
//! ```text
//! config.toml        resolved configuration
//! manifest.toml      config hash, seeds, code version
//! metrics.tsv        one line per outer iteration
//! state.toml         optimizer state of the newest checkpoint
//! checkpoints/       iter-NNNNNN.bin and iter-NNNNNN.direction.bin
//! final.bin          parameters when the run stopped
//! abort.bin          parameters when a numeric error aborted the run
//! ```

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use hfseq::checkpoint::{self, Checkpoint};
use hfseq::optimizer::{
    hf_train_step, metrics_for, sgd_iteration, train_loop, DampingState, IterationMetrics, TrainState, TrainStop,
};
use hfseq::{init_params, Model, ModelConfig, ParameterSet, Rng};
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig};
use crate::data::{self, BATCH_STREAM, INIT_STREAM, SPLIT_STREAMS};
use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub init_stream: u64,
    pub split_streams: [u64; 3],
    /// Iteration `i` draws its batch from stream `batch_stream + i`.
    pub batch_stream: u64,
    pub workers: usize,
    pub parallel_feature: bool,
    pub parameter_count: usize,
    pub vocab_size: usize,
}

/// Optimizer state saved next to each checkpoint.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SavedState {
    iteration: usize,
    damping: DampingState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    best_val: Option<f64>,
    stale: usize,
    has_direction: bool,
    config_sha256: String,
}

pub struct RunOutcome {
    pub stop: TrainStop,
    pub iterations: usize,
    pub last: Option<IterationMetrics>,
    pub best_val: Option<f64>,
}

pub struct Paths {
    pub dir: PathBuf,
}

impl Paths {
    fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn checkpoint(&self, iteration: usize) -> PathBuf {
        self.dir.join("checkpoints").join(format!("iter-{iteration:06}.bin"))
    }

    fn direction(&self, iteration: usize) -> PathBuf {
        self.dir
            .join("checkpoints")
            .join(format!("iter-{iteration:06}.direction.bin"))
    }
}

fn write_atomic(path: &Path, text: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text)?;
    fs::rename(tmp, path)
}

fn snapshot(config: &ModelConfig, theta: &[f64], symbols: Option<&String>) -> hfseq::Result<Checkpoint> {
    let ck = Checkpoint::new(config.clone(), ParameterSet::from_theta(config, theta.to_vec())?);
    Ok(match symbols {
        Some(s) => ck.with_symbols(s.clone()),
        None => ck,
    })
}

/// Trains per `config` into `config.train.output_dir`. With `resume`, picks
/// up from the newest checkpoint in that directory.
pub fn train(config: &RunConfig, resume: bool) -> CliResult<RunOutcome> {
    let paths = Paths {
        dir: config.train.output_dir.clone(),
    };
    let state_path = paths.file("state.toml");
    if !resume && state_path.exists() {
        return Err(CliError::Config(format!(
            "{} already holds a run; pass --resume to continue it or choose another output directory",
            paths.dir.display()
        )));
    }
    let prepared = data::prepare(config)?;
    let (vocab_size, output_size) = prepared.widths();
    let model_config = config.model_config(vocab_size, output_size)?;
    let model = Model::new(&model_config)?;
    let symbols = prepared.vocab.as_ref().map(|v| v.to_symbol_string());
    let hash = config.hash();
    let workers = config.train.workers;

    fs::create_dir_all(paths.dir.join("checkpoints"))
        .map_err(CliError::io(format!("creating {}", paths.dir.display())))?;
    let mut state = if resume && state_path.exists() {
        load_state(&paths, &model_config, &hash)?
    } else {
        let damping = DampingState::new(config.optimizer.damping, config.mu(), config.optimizer.lambda)?
            .with_rule(config.optimizer.mu_rule);
        let mut rng = Rng::new(config.train.seed, INIT_STREAM);
        let theta = init_params(&model_config, config.model.init, &mut rng)?.theta;
        TrainState::new(theta, damping)
    };
    let fresh = state.iteration == 0;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: hash.clone(),
        seed: config.train.seed,
        init_stream: INIT_STREAM,
        split_streams: SPLIT_STREAMS,
        batch_stream: BATCH_STREAM,
        workers,
        parallel_feature: cfg!(feature = "parallel"),
        parameter_count: model.parameter_count(),
        vocab_size,
    };
    let io = |what: &str| CliError::io(format!("writing {what} in {}", paths.dir.display()));
    write_atomic(&paths.file("config.toml"), &config.to_toml()).map_err(io("config.toml"))?;
    write_atomic(
        &paths.file("manifest.toml"),
        &toml::to_string(&manifest).expect("manifest serializes"),
    )
    .map_err(io("manifest.toml"))?;
    let metrics_path = paths.file("metrics.tsv");
    prepare_metrics(&metrics_path, state.iteration, fresh).map_err(io("metrics.tsv"))?;
    println!("{}", IterationMetrics::HEADER);

    let hf = config.hf_options(workers);
    let sgd = config.sgd_options();
    let eval = config.eval_options(workers);
    let minibatch = config.optimizer.sgd.minibatch;
    let keep = config.train.keep_checkpoints;
    let method = config.optimizer.method;
    let result = train_loop(
        &mut state,
        &config.train_options(),
        |state, grad, curv| match method {
            Method::Hf => {
                let report = hf_train_step(&model, state, grad, curv, &hf)?;
                Ok(metrics_for(state, &report, None))
            }
            Method::Sgd => sgd_iteration(&model, state, grad, &sgd, minibatch, eval),
        },
        |i| data::iteration_batch(config, &prepared.source, i),
        |theta| data::validation_metric(config, &model, &prepared.source, theta, workers),
        |state, metrics| {
            let i = state.iteration;
            checkpoint::save(
                &paths.checkpoint(i),
                &snapshot(&model_config, &state.theta, symbols.as_ref())?,
            )?;
            if let Some(d) = &state.previous_solution {
                checkpoint::save(&paths.direction(i), &snapshot(&model_config, d, None)?)?;
            }
            let line = metrics.tsv();
            println!("{line}");
            let mut f = OpenOptions::new().append(true).open(&metrics_path)?;
            writeln!(f, "{line}")?;
            let saved = SavedState {
                iteration: i,
                damping: state.damping,
                best_val: state.best_val,
                stale: state.stale,
                has_direction: state.previous_solution.is_some(),
                config_sha256: hash.clone(),
            };
            write_atomic(&state_path, &toml::to_string(&saved).expect("state serializes"))?;
            prune(&paths, i, keep);
            Ok(())
        },
    );
    match result {
        Ok(stop) => {
            let ck = snapshot(&model_config, &state.theta, symbols.as_ref())?;
            checkpoint::save(&paths.file("final.bin"), &ck)?;
            Ok(RunOutcome {
                stop,
                iterations: state.iteration,
                last: state.history.last().cloned(),
                best_val: state.best_val,
            })
        }
        Err(e) => {
            // A failed step leaves θ untouched, so this is the last good point.
            if matches!(
                e,
                hfseq::Error::NonFinite { .. }
                    | hfseq::Error::NumericFailure(_)
                    | hfseq::Error::NotPositiveDefinite { .. }
                    | hfseq::Error::UndefinedRatio
            ) {
                let ck = snapshot(&model_config, &state.theta, symbols.as_ref())?;
                checkpoint::save(&paths.file("abort.bin"), &ck)?;
                log::error!(
                    "numeric failure; parameters saved to {}",
                    paths.file("abort.bin").display()
                );
            }
            Err(e.into())
        }
    }
}

/// Creates the metrics file for a fresh run, or truncates a resumed one to
/// the iterations covered by the newest checkpoint.
fn prepare_metrics(path: &Path, iteration: usize, fresh: bool) -> std::io::Result<()> {
    let mut text = format!("{}\n", IterationMetrics::HEADER);
    if !fresh {
        let old = fs::read_to_string(path).unwrap_or_default();
        for line in old.lines().skip(1) {
            let n: usize = line
                .split('\t')
                .next()
                .and_then(|s| s.parse().ok())
                .unwrap_or(usize::MAX);
            if n <= iteration {
                text.push_str(line);
                text.push('\n');
            }
        }
    }
    write_atomic(path, &text)
}

fn load_state(paths: &Paths, config: &ModelConfig, hash: &str) -> CliResult<TrainState> {
    let state_path = paths.file("state.toml");
    let text = fs::read_to_string(&state_path).map_err(CliError::io(format!("reading {}", state_path.display())))?;
    let saved: SavedState =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", state_path.display())))?;
    if saved.config_sha256 != hash {
        log::warn!("configuration differs from the one that started this run");
    }
    let ck = checkpoint::load(&paths.checkpoint(saved.iteration))?;
    if &ck.config != config {
        return Err(CliError::Config(format!(
            "checkpoint model {:?} does not match the configured model {:?}",
            ck.config, config
        )));
    }
    let mut state = TrainState::new(ck.params.theta, saved.damping);
    state.iteration = saved.iteration;
    state.best_val = saved.best_val;
    state.stale = saved.stale;
    if saved.has_direction {
        state.previous_solution = Some(checkpoint::load(&paths.direction(saved.iteration))?.params.theta);
    }
    Ok(state)
}

/// Removes per-iteration checkpoints older than the newest `keep`.
fn prune(paths: &Paths, newest: usize, keep: usize) {
    if newest > keep {
        let old = newest - keep;
        let _ = fs::remove_file(paths.checkpoint(old));
        let _ = fs::remove_file(paths.direction(old));
    }
}

//! `hfseq`: train, evaluate, sample and probe Hessian-free recurrent
//! character models.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or
//! arguments.

mod commands;
mod config;
mod data;
mod error;
mod run;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hfseq::analysis::TimelagOptions;
use hfseq::models::StructuralTarget;
use hfseq::verify::CheckOptions;
use hfseq::Architecture;

use crate::commands::{EvalArgs, GradcheckArgs, SampleArgs};
use crate::config::{RunConfig, PRESETS};
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "hfseq",
    version,
    about = "Hessian-free training of recurrent character models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes metrics, checkpoints and a manifest.
    Train(TrainArgs),
    /// Bits/char of a checkpoint on a corpus split.
    Eval(EvalCmd),
    /// Draw text from a trained character model.
    Sample(SampleCmd),
    /// Bracket time-lag probe: log10 P(']')/P('[') after two contexts.
    Timelag(TimelagCmd),
    /// Compare analytic derivatives with brute-force oracles.
    Gradcheck(GradcheckCmd),
    /// List the built-in presets, or print one.
    Presets { name: Option<String> },
}

#[derive(Args)]
struct ConfigSource {
    /// Run configuration file (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name (see `hfseq presets`).
    #[arg(long)]
    preset: Option<String>,
}

impl ConfigSource {
    fn load(&self) -> CliResult<Option<RunConfig>> {
        match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path).map(Some),
            (None, Some(name)) => config::preset(name).map(Some),
            (None, None) => Ok(None),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Run directory; overrides `train.output_dir`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Continue the run in the output directory from its newest checkpoint.
    /// Without --config or --preset, reuses the directory's config.toml.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Plain-text corpus; replaces the configured data source.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Takes the corpus, split and sequence length from this run config.
    #[command(flatten)]
    source: ConfigSource,
    /// Plain-text corpus; replaces the configured data source.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// train, validation or test.
    #[arg(long, default_value = "validation")]
    split: String,
    /// counts:A,B,C or fractions:A,B,C; defaults to the config's split.
    #[arg(long)]
    split_spec: Option<String>,
    /// Window length; defaults to the config's sequence length.
    #[arg(long)]
    steps: Option<usize>,
    /// Contiguous streams evaluated side by side.
    #[arg(long, default_value_t = 1)]
    streams: usize,
}

#[derive(Args)]
struct SampleCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "")]
    context: String,
    #[arg(long, default_value_t = 200)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Only these characters may be emitted.
    #[arg(long, conflicts_with = "letters")]
    constraints: Option<String>,
    /// Only letters and space may be emitted.
    #[arg(long)]
    letters: bool,
}

#[derive(Args)]
struct TimelagCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Block length of the smoothing average.
    #[arg(long, default_value_t = 10)]
    block: usize,
    #[arg(long, default_value = "[[")]
    experimental: String,
    #[arg(long, default_value = "Th")]
    control: String,
    /// Characters the probe may emit; defaults to letters and space.
    #[arg(long)]
    allowed: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckCmd {
    /// Check the model shape of this run config instead of small defaults.
    #[command(flatten)]
    source: ConfigSource,
    /// Architectures to check (default: all).
    #[arg(long, value_delimiter = ',')]
    architecture: Vec<Architecture>,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 5)]
    vocab: usize,
    #[arg(long, default_value_t = 4)]
    hidden: usize,
    #[arg(long, default_value_t = 7)]
    steps: usize,
    #[arg(long, default_value_t = 2)]
    sequences: usize,
    #[arg(long, default_value_t = 10)]
    probes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn chars(s: &str) -> BTreeSet<char> {
    s.chars().collect()
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let mut config = match (args.source.load()?, args.resume, &args.output) {
        (Some(c), _, _) => c,
        (None, true, Some(dir)) => RunConfig::load(&dir.join("config.toml"))?,
        _ => {
            return Err(CliError::Config(
                "train needs --config or --preset (or --resume with --output)".into(),
            ))
        }
    };
    if let Some(dir) = args.output {
        config.train.output_dir = dir;
    }
    if let Some(n) = args.max_iterations {
        config.train.max_iterations = n;
    }
    if let Some(w) = args.workers {
        config.train.workers = w;
    }
    if let Some(s) = args.seed {
        config.train.seed = s;
    }
    if let Some(c) = args.corpus {
        config.data.corpus = Some(c);
        config.data.synthetic = None;
    }
    config.validate()?;
    let out = run::train(&config, args.resume)?;
    let train_bits = out.last.map_or(f64::NAN, |m| m.train_bits);
    eprintln!(
        "stopped ({}) after {} iterations: train {train_bits:.4}, best validation {}; final parameters in {}",
        out.stop.as_str(),
        out.iterations,
        out.best_val.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}")),
        config.train.output_dir.join("final.bin").display()
    );
    Ok(())
}

fn cmd_eval(args: EvalCmd) -> CliResult<()> {
    let mut config = args.source.load()?.unwrap_or_default();
    if let Some(c) = args.corpus {
        config.data.corpus = Some(c);
        config.data.synthetic = None;
    }
    let split_spec = args.split_spec.as_deref().map(commands::parse_split_spec).transpose()?;
    let steps = args.steps.unwrap_or_else(|| config.data.sequence_steps());
    let bits = commands::eval(EvalArgs {
        checkpoint: &args.checkpoint,
        config,
        split: &args.split,
        split_spec,
        steps,
        streams: args.streams,
    })?;
    println!("{bits}");
    Ok(())
}

fn cmd_sample(args: SampleCmd) -> CliResult<()> {
    let constraints = match (&args.constraints, args.letters) {
        (Some(s), _) => Some(chars(s)),
        (None, true) => Some(commands::default_allowed()),
        (None, false) => None,
    };
    let text = commands::sample_text(SampleArgs {
        checkpoint: &args.checkpoint,
        context: &args.context,
        length: args.length,
        seed: args.seed,
        constraints,
    })?;
    if !text.is_empty() {
        println!("{text}");
    }
    Ok(())
}

fn cmd_timelag(args: TimelagCmd) -> CliResult<()> {
    let opts = TimelagOptions {
        experimental: args.experimental,
        control: args.control,
        steps: args.steps,
        trials: args.trials,
        block: args.block,
        allowed: args.allowed.as_deref().map_or_else(commands::default_allowed, chars),
    };
    let result = commands::timelag(&args.checkpoint, &opts, args.seed)?;
    print!("{}", result.tsv());
    let above = result.blocks_above();
    eprintln!(
        "experimental above control in {}/{} blocks",
        above.iter().filter(|&&b| b).count(),
        above.len()
    );
    Ok(())
}

fn cmd_gradcheck(args: GradcheckCmd) -> CliResult<()> {
    let architectures = if args.architecture.is_empty() {
        Architecture::ALL.to_vec()
    } else {
        args.architecture.clone()
    };
    let (models, target) = match args.source.load()? {
        Some(c) => {
            let (v, out) = match c.data.synthetic {
                Some(hfseq::data::SyntheticTask::MarkedAddition { .. }) => (2, Some(1)),
                _ => (args.vocab, None),
            };
            (vec![c.model_config(v, out)?], c.optimizer.structural_target)
        }
        None => (
            commands::gradcheck_models(&architectures, args.vocab, args.hidden),
            StructuralTarget::HiddenOutput,
        ),
    };
    let reports = commands::gradcheck(&GradcheckArgs {
        models,
        steps: args.steps,
        sequences: args.sequences,
        theta_std: 0.5,
        target,
        opts: CheckOptions {
            h: args.h,
            tolerance: args.tolerance,
            probes: args.probes,
            seed: args.seed,
        },
    })?;
    println!("quantity\tmax_rel_error\tmean_rel_error\tworst\ttolerance\tresult");
    for r in &reports {
        println!("{}", r.tsv());
    }
    match reports.iter().filter(|r| !r.passed).count() {
        0 => Ok(()),
        n => Err(CliError::OracleFailed(n)),
    }
}

fn cmd_presets(name: Option<String>) -> CliResult<()> {
    match name {
        None => {
            for (n, _) in PRESETS {
                println!("{n}");
            }
        }
        Some(n) => {
            let (_, text) = PRESETS
                .iter()
                .find(|(p, _)| *p == n)
                .ok_or_else(|| CliError::Config(format!("unknown preset `{n}`")))?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Timelag(a) => cmd_timelag(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Presets { name } => cmd_presets(name),
    };
    let _ = std::io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

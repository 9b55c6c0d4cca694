//! The evaluation, sampling, probe and oracle commands.

use std::collections::BTreeSet;
use std::path::Path;

use hfseq::analysis::{letters_and_space, sample, streaming_bits, timelag_probe, TimelagOptions, TimelagResult};
use hfseq::checkpoint::{self, Checkpoint};
use hfseq::data::{SplitSpec, Vocabulary};
use hfseq::models::StructuralTarget;
use hfseq::verify::{check_model, CheckOptions, OracleReport};
use hfseq::{Architecture, Batch, Model, ModelConfig, OutputMode, Rng};

use crate::config::RunConfig;
use crate::data::text_splits;
use crate::error::{CliError, CliResult};

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    checkpoint::load(path).map_err(|e| match e {
        hfseq::Error::Io(source) => CliError::Io {
            context: format!("reading checkpoint {}", path.display()),
            source,
        },
        other => other.into(),
    })
}

/// The vocabulary stored with a character model.
pub fn checkpoint_vocab(ck: &Checkpoint) -> CliResult<Vocabulary> {
    let symbols = ck
        .symbols
        .as_ref()
        .ok_or_else(|| CliError::Config("checkpoint has no vocabulary (not a character model)".into()))?;
    let vocab = Vocabulary::from_symbols(symbols.chars());
    if vocab.len() != ck.config.vocab_size {
        return Err(hfseq::Error::Vocabulary(format!(
            "checkpoint stores {} symbols but the model has {} inputs",
            vocab.len(),
            ck.config.vocab_size
        ))
        .into());
    }
    Ok(vocab)
}

/// Parses `counts:TRAIN,VAL,TEST` or `fractions:TRAIN,VAL,TEST`.
pub fn parse_split_spec(s: &str) -> CliResult<SplitSpec> {
    let bad = || CliError::Config(format!("bad split spec `{s}`; use counts:A,B,C or fractions:A,B,C"));
    let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
    let parts: Vec<&str> = rest.split(',').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    match kind {
        "counts" => {
            let v: Vec<usize> = parts
                .iter()
                .map(|p| p.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|_| bad())?;
            Ok(SplitSpec::Counts {
                train: v[0],
                validation: v[1],
                test: v[2],
            })
        }
        "fractions" => {
            let v: Vec<f64> = parts
                .iter()
                .map(|p| p.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|_| bad())?;
            Ok(SplitSpec::Fractions {
                train: v[0],
                validation: v[1],
                test: v[2],
            })
        }
        _ => Err(bad()),
    }
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub config: RunConfig,
    pub split: &'a str,
    pub split_spec: Option<SplitSpec>,
    pub steps: usize,
    pub streams: usize,
}

/// Bits/char of a checkpoint on one split, with state carried across
/// consecutive windows.
pub fn eval(args: EvalArgs) -> CliResult<f64> {
    let ck = load_checkpoint(args.checkpoint)?;
    let vocab = checkpoint_vocab(&ck)?;
    let index = ["train", "validation", "test"]
        .iter()
        .position(|s| *s == args.split)
        .ok_or_else(|| CliError::Config(format!("unknown split `{}`; use train, validation or test", args.split)))?;
    let (corpus_vocab, mut splits) = text_splits(&args.config, args.split_spec.as_ref())?;
    vocab.ensure_matches(&corpus_vocab)?;
    let ids = std::mem::take(&mut splits[index]);
    let model = Model::new(&ck.config)?;
    Ok(streaming_bits(
        &model,
        &ck.params.theta,
        &ids,
        args.steps,
        args.streams,
    )?)
}

pub struct SampleArgs<'a> {
    pub checkpoint: &'a Path,
    pub context: &'a str,
    pub length: usize,
    pub seed: u64,
    pub constraints: Option<BTreeSet<char>>,
}

pub fn sample_text(args: SampleArgs) -> CliResult<String> {
    let ck = load_checkpoint(args.checkpoint)?;
    let vocab = checkpoint_vocab(&ck)?;
    let model = Model::new(&ck.config)?;
    let run = sample(
        &model,
        &ck.params.theta,
        &vocab,
        args.context,
        args.length,
        args.seed,
        args.constraints.as_ref(),
        false,
    )?;
    Ok(run.text)
}

pub fn timelag(checkpoint: &Path, opts: &TimelagOptions, seed: u64) -> CliResult<TimelagResult> {
    let ck = load_checkpoint(checkpoint)?;
    let vocab = checkpoint_vocab(&ck)?;
    let model = Model::new(&ck.config)?;
    Ok(timelag_probe(&model, &ck.params.theta, &vocab, opts, seed)?)
}

/// Default symbols a probe may emit: letters and space.
pub fn default_allowed() -> BTreeSet<char> {
    letters_and_space()
}

pub struct GradcheckArgs {
    /// Architectures and output modes to check, with their shapes.
    pub models: Vec<ModelConfig>,
    pub steps: usize,
    pub sequences: usize,
    pub theta_std: f64,
    pub target: StructuralTarget,
    pub opts: CheckOptions,
}

/// Small models of every architecture and output mode.
pub fn gradcheck_models(architectures: &[Architecture], vocab: usize, hidden: usize) -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for &arch in architectures {
        for mode in [OutputMode::SoftmaxXent, OutputMode::LinearMse] {
            out.push(ModelConfig::text(arch, vocab, hidden).with_output_mode(mode));
        }
    }
    out
}

/// Runs the oracle suite on random parameters and batches.
pub fn gradcheck(args: &GradcheckArgs) -> CliResult<Vec<OracleReport>> {
    let mut reports = Vec::new();
    for (k, config) in args.models.iter().enumerate() {
        config.validate()?;
        let model = Model::new(config)?;
        let mut rng = Rng::new(args.opts.seed, 100 + k as u64);
        let theta: Vec<f64> = (0..model.parameter_count())
            .map(|_| args.theta_std * rng.normal())
            .collect();
        let (t, n, v) = (args.steps, args.sequences, config.vocab_size);
        let ids: Vec<u32> = (0..(t + 1) * n).map(|_| rng.below(v) as u32).collect();
        let batch = Batch::symbols(t, n, ids[..t * n].to_vec(), ids[n..].to_vec())?;
        reports.extend(check_model(&model, &theta, &batch, args.target, args.opts)?);
    }
    Ok(reports)
}

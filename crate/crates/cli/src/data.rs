//! Turns the data section of a run config into batches and a validation
//! metric.

use hfseq::analysis::window_bits;
use hfseq::data::{curvature_indices, gen_synthetic, load_corpus, make_batches, SplitSpec, SyntheticTask, Vocabulary};
use hfseq::models::bits;
use hfseq::{Batch, Model, OutputMode, Rng};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Random stream for the model initialization.
pub const INIT_STREAM: u64 = 0;
/// Streams for the generated train / validation / test data of synthetic
/// tasks.
pub const SPLIT_STREAMS: [u64; 3] = [1, 2, 3];
/// Iteration `i` draws its batch from stream `BATCH_STREAM + i`.
pub const BATCH_STREAM: u64 = 1000;

pub enum Source {
    /// Encoded character streams.
    Text { train: Vec<u32>, validation: Vec<u32> },
    /// Freshly generated dense sequences each iteration.
    Dense { task: SyntheticTask, validation: Batch },
}

pub struct Prepared {
    pub vocab: Option<Vocabulary>,
    pub source: Source,
}

impl Prepared {
    /// Model input and output widths.
    pub fn widths(&self) -> (usize, Option<usize>) {
        match &self.vocab {
            Some(v) => (v.len(), None),
            // Marked addition: two input channels, one output.
            None => (2, Some(1)),
        }
    }
}

/// Text of one split of a synthetic text task.
pub fn synthetic_text(config: &RunConfig, task: &SyntheticTask, split: usize) -> CliResult<String> {
    let len = if split == 0 {
        config.data.synthetic_train_chars
    } else {
        config.data.synthetic_validation_chars
    };
    let mut rng = Rng::new(config.train.seed, SPLIT_STREAMS[split]);
    Ok(task.text(0, len, &mut rng)?)
}

/// Encoded train / validation / test splits of a text source, with the
/// vocabulary built from the training split. `spec` overrides the
/// configured corpus split.
pub fn text_splits(config: &RunConfig, spec: Option<&SplitSpec>) -> CliResult<(Vocabulary, [Vec<u32>; 3])> {
    let d = &config.data;
    match (&d.corpus, &d.synthetic) {
        (Some(path), _) => {
            let (vocab, s) =
                load_corpus(path, spec.unwrap_or(&d.split)).map_err(|e| with_path(e, &path.display().to_string()))?;
            Ok((vocab, [s.train, s.validation, s.test]))
        }
        (None, Some(task)) => {
            let vocab = task
                .vocabulary()
                .ok_or_else(|| CliError::Config("marked addition has no text splits".into()))?;
            let mut splits = [Vec::new(), Vec::new(), Vec::new()];
            for (i, out) in splits.iter_mut().enumerate() {
                *out = vocab.encode(&synthetic_text(config, task, i)?);
            }
            Ok((vocab, splits))
        }
        (None, None) => Err(CliError::Config("data: no source configured".into())),
    }
}

fn with_path(e: hfseq::Error, path: &str) -> CliError {
    match e {
        hfseq::Error::Io(source) => CliError::Io {
            context: format!("reading corpus {path}"),
            source,
        },
        other => other.into(),
    }
}

pub fn prepare(config: &RunConfig) -> CliResult<Prepared> {
    match &config.data.synthetic {
        Some(task @ SyntheticTask::MarkedAddition { .. }) => {
            let mut rng = Rng::new(config.train.seed, SPLIT_STREAMS[1]);
            let validation = gen_synthetic(task, config.data.validation_sequences, &mut rng)?;
            Ok(Prepared {
                vocab: None,
                source: Source::Dense {
                    task: task.clone(),
                    validation,
                },
            })
        }
        _ => {
            let (vocab, [train, validation, _]) = text_splits(config, None)?;
            Ok(Prepared {
                vocab: Some(vocab),
                source: Source::Text { train, validation },
            })
        }
    }
}

/// Gradient batch and curvature indices of iteration `i`. Depends only on
/// the seed and `i`, so a resumed run sees the same batches.
pub fn iteration_batch(config: &RunConfig, source: &Source, i: usize) -> hfseq::Result<(Batch, Vec<usize>)> {
    let d = &config.data;
    let mut rng = Rng::new(config.train.seed, BATCH_STREAM + i as u64);
    let batch = match source {
        Source::Text { train, .. } => make_batches(
            train,
            d.sequence_steps(),
            usize::MAX,
            d.window_stride(),
            d.gradient,
            &mut rng,
        )?
        .remove(0),
        Source::Dense { task, .. } => gen_synthetic(task, d.sequences, &mut rng)?,
    };
    let curvature = curvature_indices(batch.sequences, d.curvature_fraction, &mut rng)?;
    Ok((batch, curvature))
}

/// Validation bits/char for text, or mean squared error for regression.
pub fn validation_metric(
    config: &RunConfig,
    model: &Model,
    source: &Source,
    theta: &[f64],
    workers: usize,
) -> hfseq::Result<Option<f64>> {
    if config.data.no_validation {
        return Ok(None);
    }
    let value = match source {
        Source::Text { validation, .. } => {
            window_bits(model, theta, validation, config.data.sequence_steps(), workers)?
        }
        Source::Dense { validation, .. } => {
            let loss = model.loss(theta, validation, config.eval_options(workers))?;
            match model.config().output_mode {
                OutputMode::LinearMse => 2.0 * loss,
                OutputMode::SoftmaxXent => bits(loss),
            }
        }
    };
    Ok(Some(value))
}

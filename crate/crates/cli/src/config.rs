//! Run configuration, read from TOML. Every field has a default; unknown
//! keys are rejected.

use std::path::{Path, PathBuf};
use std::time::Duration;

use hfseq::data::{SplitSpec, SyntheticTask, WindowSelection};
use hfseq::models::StructuralTarget;
use hfseq::optimizer::{CgOptions, DampingMode, HfOptions, LineSearchOptions, MuRule, SgdOptions, TrainOptions};
use hfseq::{Architecture, EvalOptions, InitScheme, ModelConfig, OutputMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub architecture: Architecture,
    /// Hidden width of a single-layer model.
    pub hidden: usize,
    /// Per-layer widths; overrides `hidden` (stacked models take several).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_sizes: Option<Vec<usize>>,
    /// Factor width of the multiplicative models; defaults to the first
    /// hidden width.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor_size: Option<usize>,
    /// Defaults to `linear_mse` for marked addition, else `softmax_xent`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_mode: Option<OutputMode>,
    pub extra_biases: bool,
    pub init: InitScheme,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            architecture: Architecture::Mlstm,
            hidden: 64,
            hidden_sizes: None,
            factor_size: None,
            output_mode: None,
            extra_biases: false,
            init: InitScheme::Dense { std: 0.1 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Plain-text corpus; exactly one of `corpus` and `synthetic` is set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticTask>,
    /// Corpus split into train / validation / test.
    pub split: SplitSpec,
    /// Sequence length `T` for corpus windows (synthetic tasks carry their
    /// own).
    pub steps: usize,
    /// Offset between consecutive windows; defaults to `steps`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    /// Which windows form each iteration's gradient batch.
    pub gradient: WindowSelection,
    /// Fraction of the gradient batch used for curvature products.
    pub curvature_fraction: f64,
    /// Characters generated for a synthetic text task's training and
    /// validation texts.
    pub synthetic_train_chars: usize,
    pub synthetic_validation_chars: usize,
    /// Sequences per iteration and held-out sequences for marked addition.
    pub sequences: usize,
    pub validation_sequences: usize,
    /// Skip validation (and therefore early stopping).
    pub no_validation: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            corpus: None,
            synthetic: None,
            split: SplitSpec::default(),
            steps: 200,
            stride: None,
            gradient: WindowSelection::All,
            curvature_fraction: 0.25,
            synthetic_train_chars: 100_000,
            synthetic_validation_chars: 10_000,
            sequences: 400,
            validation_sequences: 500,
            no_validation: false,
        }
    }
}

impl DataSection {
    /// Sequence length actually used.
    pub fn sequence_steps(&self) -> usize {
        self.synthetic.as_ref().map_or(self.steps, SyntheticTask::steps)
    }

    pub fn window_stride(&self) -> usize {
        self.stride.unwrap_or_else(|| self.sequence_steps())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Hf,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub method: Method,
    pub damping: DampingMode,
    /// Initial structural damping; defaults by architecture (0.01 rnn and
    /// lstm, 0.3 mrnn and stacked_mrnn, 0.1 mlstm).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Tikhonov damping.
    pub lambda: f64,
    pub mu_rule: MuRule,
    pub structural_target: StructuralTarget,
    /// Start CG from this decay times the previous solution.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<f64>,
    pub mu_eval_every: usize,
    pub max_linesearch_failures: usize,
    /// Segment length for checkpointed back-propagation; 0 stores every
    /// timestep.
    pub bptt_checkpoint: usize,
    pub cg: CgSection,
    pub line_search: LineSearchSection,
    pub sgd: SgdSection,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let hf = HfOptions::default();
        OptimizerSection {
            method: Method::Hf,
            damping: DampingMode::Structural,
            mu: None,
            lambda: 0.0,
            mu_rule: MuRule::default(),
            structural_target: StructuralTarget::default(),
            warm_start: None,
            mu_eval_every: hf.mu_eval_every,
            max_linesearch_failures: hf.max_linesearch_failures,
            bptt_checkpoint: 0,
            cg: CgSection::default(),
            line_search: LineSearchSection::default(),
            sgd: SgdSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CgSection {
    pub max_iters: usize,
    pub progress_window: usize,
    pub progress_tol: f64,
    pub residual_tol: f64,
}

impl Default for CgSection {
    fn default() -> Self {
        let cg = CgOptions::default();
        CgSection {
            max_iters: cg.max_iters,
            progress_window: cg.progress_window,
            progress_tol: cg.progress_tol,
            residual_tol: cg.residual_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineSearchSection {
    pub decay: f64,
    pub max_iterations: usize,
}

impl Default for LineSearchSection {
    fn default() -> Self {
        let ls = LineSearchOptions::default();
        LineSearchSection {
            decay: ls.decay,
            max_iterations: ls.max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdSection {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Gradient-norm clipping threshold; 0 disables clipping.
    pub clip: f64,
    pub minibatch: usize,
}

impl Default for SgdSection {
    fn default() -> Self {
        SgdSection {
            learning_rate: 0.1,
            momentum: 0.9,
            clip: 1.0,
            minibatch: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub max_iterations: usize,
    /// Iterations without validation improvement before stopping.
    pub patience: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_limit_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_below_bits: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_below_val: Option<f64>,
    /// Seeds initialization, batch selection and synthetic data.
    pub seed: u64,
    /// Model-evaluation chunks; results do not depend on it beyond
    /// floating-point summation order.
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Per-iteration checkpoints kept on disk (the newest ones).
    pub keep_checkpoints: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainOptions::default();
        TrainSection {
            max_iterations: t.max_iterations,
            patience: t.patience,
            time_limit_seconds: None,
            stop_below_bits: None,
            stop_below_val: None,
            seed: 0,
            workers: 1,
            output_dir: PathBuf::from("runs/default"),
            keep_checkpoints: 2,
        }
    }
}

/// Structural damping used when the config leaves `mu` unset.
pub fn default_mu(arch: Architecture) -> f64 {
    match arch {
        Architecture::Rnn | Architecture::Lstm => 0.01,
        Architecture::Mrnn | Architecture::StackedMrnn => 0.3,
        Architecture::Mlstm => 0.1,
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<RunConfig> {
        let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = RunConfig::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        // Relative corpus paths are relative to the config file.
        if let (Some(corpus), Some(dir)) = (&config.data.corpus, path.parent()) {
            if corpus.is_relative() && !corpus.exists() {
                config.data.corpus = Some(dir.join(corpus));
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        let d = &self.data;
        match (&d.corpus, &d.synthetic) {
            (Some(_), Some(_)) => return Err(config_err("data: set only one of `corpus` and `synthetic`")),
            (None, None) => return Err(config_err("data: one of `corpus` or `synthetic` is required")),
            (None, Some(task)) => task
                .validate()
                .map_err(|e| config_err(format!("data.synthetic: {e}")))?,
            _ => {}
        }
        if d.steps == 0 {
            return Err(config_err("data.steps must be positive"));
        }
        if d.stride == Some(0) {
            return Err(config_err("data.stride must be positive"));
        }
        if !(d.curvature_fraction > 0.0 && d.curvature_fraction <= 1.0) {
            return Err(config_err("data.curvature_fraction must lie in (0, 1]"));
        }
        if d.sequences == 0 || d.validation_sequences == 0 {
            return Err(config_err(
                "data.sequences and data.validation_sequences must be positive",
            ));
        }
        if self.train.workers == 0 {
            return Err(config_err("train.workers must be at least 1"));
        }
        if self.train.keep_checkpoints == 0 {
            return Err(config_err("train.keep_checkpoints must be at least 1"));
        }
        if let Some(s) = self.train.time_limit_seconds {
            if !(s > 0.0 && s.is_finite()) {
                return Err(config_err("train.time_limit_seconds must be positive"));
            }
        }
        let mu = self.mu();
        if !(mu >= 0.0 && mu.is_finite()) || !(self.optimizer.lambda >= 0.0 && self.optimizer.lambda.is_finite()) {
            return Err(config_err(
                "optimizer.mu and optimizer.lambda must be finite and non-negative",
            ));
        }
        self.hf_options(1)
            .validate()
            .map_err(|e| config_err(format!("optimizer: {e}")))?;
        self.sgd_options()
            .validate()
            .map_err(|e| config_err(format!("optimizer.sgd: {e}")))?;
        if self.optimizer.sgd.minibatch == 0 {
            return Err(config_err("optimizer.sgd.minibatch must be at least 1"));
        }
        Ok(())
    }

    pub fn mu(&self) -> f64 {
        self.optimizer.mu.unwrap_or_else(|| default_mu(self.model.architecture))
    }

    pub fn output_mode(&self) -> OutputMode {
        self.model.output_mode.unwrap_or(match self.data.synthetic {
            Some(SyntheticTask::MarkedAddition { .. }) => OutputMode::LinearMse,
            _ => OutputMode::SoftmaxXent,
        })
    }

    /// Model shape for an input alphabet of `vocab_size` and `output_size`
    /// outputs (when it differs).
    pub fn model_config(&self, vocab_size: usize, output_size: Option<usize>) -> CliResult<ModelConfig> {
        let m = &self.model;
        let arch = m.architecture;
        let hidden_sizes = match (&m.hidden_sizes, arch) {
            (Some(h), _) => h.clone(),
            (None, Architecture::StackedMrnn) => vec![m.hidden; 2],
            (None, _) => vec![m.hidden],
        };
        let factor_size = if arch.is_multiplicative() {
            Some(m.factor_size.unwrap_or(hidden_sizes[0]))
        } else {
            m.factor_size
        };
        let config = ModelConfig {
            architecture: arch,
            vocab_size,
            output_size,
            hidden_sizes,
            factor_size,
            output_mode: self.output_mode(),
            seed: self.train.seed,
            extra_biases: m.extra_biases,
        };
        config.validate().map_err(|e| config_err(format!("model: {e}")))?;
        Ok(config)
    }

    pub fn eval_options(&self, workers: usize) -> EvalOptions {
        EvalOptions::default()
            .with_workers(workers)
            .with_checkpoint_interval(self.optimizer.bptt_checkpoint)
    }

    pub fn hf_options(&self, workers: usize) -> HfOptions {
        let o = &self.optimizer;
        HfOptions {
            cg: CgOptions {
                max_iters: o.cg.max_iters,
                progress_window: o.cg.progress_window,
                progress_tol: o.cg.progress_tol,
                residual_tol: o.cg.residual_tol,
                record_iterates: false,
            },
            line_search: LineSearchOptions {
                decay: o.line_search.decay,
                max_iterations: o.line_search.max_iterations,
            },
            max_linesearch_failures: o.max_linesearch_failures,
            mu_eval_every: o.mu_eval_every,
            warm_start: o.warm_start,
            structural_target: o.structural_target,
            eval: self.eval_options(workers),
        }
    }

    pub fn sgd_options(&self) -> SgdOptions {
        let s = &self.optimizer.sgd;
        SgdOptions {
            learning_rate: s.learning_rate,
            momentum: s.momentum,
            clip: (s.clip != 0.0).then_some(s.clip),
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        let t = &self.train;
        TrainOptions {
            max_iterations: t.max_iterations,
            patience: t.patience,
            time_limit: t.time_limit_seconds.map(Duration::from_secs_f64),
            stop_below_bits: t.stop_below_bits,
            stop_below_val: t.stop_below_val,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Presets shipped with the binary, by name.
pub const PRESETS: [(&str, &str); 7] = [
    ("ptb-preliminary", include_str!("../../../presets/ptb-preliminary.toml")),
    ("ptb-full", include_str!("../../../presets/ptb-full.toml")),
    ("wiki", include_str!("../../../presets/wiki.toml")),
    (
        "synthetic-periodic",
        include_str!("../../../presets/synthetic-periodic.toml"),
    ),
    (
        "synthetic-brackets",
        include_str!("../../../presets/synthetic-brackets.toml"),
    ),
    (
        "synthetic-marked-addition",
        include_str!("../../../presets/synthetic-marked-addition.toml"),
    ),
    (
        "synthetic-periodic-sgd",
        include_str!("../../../presets/synthetic-periodic-sgd.toml"),
    ),
];

pub fn preset(name: &str) -> CliResult<RunConfig> {
    let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
        let names: Vec<_> = PRESETS.iter().map(|(n, _)| *n).collect();
        config_err(format!("unknown preset `{name}` (available: {})", names.join(", ")))
    })?;
    RunConfig::from_toml(text).map_err(|e| match e {
        CliError::Config(msg) => config_err(format!("preset {name}: {msg}")),
        other => other,
    })
}

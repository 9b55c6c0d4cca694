use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Recurrent architecture family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Rnn,
    Lstm,
    Mrnn,
    StackedMrnn,
    Mlstm,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Rnn,
        Architecture::Lstm,
        Architecture::Mrnn,
        Architecture::StackedMrnn,
        Architecture::Mlstm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Rnn => "rnn",
            Architecture::Lstm => "lstm",
            Architecture::Mrnn => "mrnn",
            Architecture::StackedMrnn => "stacked_mrnn",
            Architecture::Mlstm => "mlstm",
        }
    }

    pub fn is_multiplicative(self) -> bool {
        matches!(
            self,
            Architecture::Mrnn | Architecture::StackedMrnn | Architecture::Mlstm
        )
    }

    pub fn is_gated(self) -> bool {
        matches!(self, Architecture::Lstm | Architecture::Mlstm)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown architecture `{s}`")))
    }
}

/// Output nonlinearity paired with its matching loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Softmax probabilities with cross-entropy loss.
    SoftmaxXent,
    /// Identity outputs with half squared error.
    LinearMse,
}

impl OutputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputMode::SoftmaxXent => "softmax_xent",
            OutputMode::LinearMse => "linear_mse",
        }
    }
}

impl FromStr for OutputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax_xent" => Ok(OutputMode::SoftmaxXent),
            "linear_mse" => Ok(OutputMode::LinearMse),
            _ => Err(Error::config(format!("unknown output mode `{s}`"))),
        }
    }
}

/// Shape of a model. The parameter layout is a pure function of this value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Input width `V` (the alphabet size for character models).
    pub vocab_size: usize,
    /// Output width when it differs from `vocab_size` (dense regression tasks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_size: Option<usize>,
    /// One entry, or the per-layer widths of a stacked model.
    pub hidden_sizes: Vec<usize>,
    /// Width of the multiplicative intermediate state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor_size: Option<usize>,
    pub output_mode: OutputMode,
    #[serde(default)]
    pub seed: u64,
    /// Adds gate and output biases to the LSTM-family cells, and an output
    /// bias to the others.
    #[serde(default)]
    pub extra_biases: bool,
}

impl ModelConfig {
    /// Character model with one hidden layer; `factor_size` is filled in
    /// automatically for the multiplicative architectures.
    pub fn text(architecture: Architecture, vocab_size: usize, hidden: usize) -> Self {
        let (hidden_sizes, factor_size) = match architecture {
            Architecture::StackedMrnn => (vec![hidden; 2], Some(hidden)),
            a if a.is_multiplicative() => (vec![hidden], Some(hidden)),
            _ => (vec![hidden], None),
        };
        ModelConfig {
            architecture,
            vocab_size,
            output_size: None,
            hidden_sizes,
            factor_size,
            output_mode: OutputMode::SoftmaxXent,
            seed: 0,
            extra_biases: false,
        }
    }

    pub fn with_output_mode(mut self, mode: OutputMode) -> Self {
        self.output_mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn output_width(&self) -> usize {
        self.output_size.unwrap_or(self.vocab_size)
    }

    pub fn hidden(&self) -> usize {
        self.hidden_sizes[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::config("vocab_size must be positive"));
        }
        if self.output_size == Some(0) {
            return Err(Error::config("output_size must be positive"));
        }
        if self.hidden_sizes.is_empty() {
            return Err(Error::config("hidden_sizes must not be empty"));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::config("hidden_sizes entries must be positive"));
        }
        let arch = self.architecture;
        if arch != Architecture::StackedMrnn && self.hidden_sizes.len() != 1 {
            return Err(Error::config(format!(
                "hidden_sizes must have exactly one entry for {arch}"
            )));
        }
        match (arch.is_multiplicative(), self.factor_size) {
            (true, None) => return Err(Error::config(format!("factor_size is required for {arch}"))),
            (false, Some(_)) => return Err(Error::config(format!("factor_size is not allowed for {arch}"))),
            (true, Some(0)) => return Err(Error::config("factor_size must be positive")),
            _ => {}
        }
        // Stacked layers tie each factor width to the layer's hidden width;
        // `factor_size` names the first one.
        if matches!(arch, Architecture::Mlstm | Architecture::StackedMrnn)
            && self.factor_size != Some(self.hidden_sizes[0])
        {
            return Err(Error::config(format!("{arch} requires factor_size == hidden_sizes[0]")));
        }
        Ok(())
    }

    /// Closed-form parameter count, computed without building a layout.
    pub fn parameter_count(&self) -> usize {
        let v = self.vocab_size;
        let o = self.output_width();
        let h = self.hidden_sizes[0];
        let m = self.factor_size.unwrap_or(0);
        let extra = self.extra_biases;
        let out_bias = if extra { o } else { 0 };
        match self.architecture {
            Architecture::Rnn => h * v + h * h + o * h + h + out_bias,
            Architecture::Mrnn => h * v + m * v + m * h + h * m + o * h + h + out_bias,
            Architecture::Lstm => 4 * (h * v + h * h) + o * h + if extra { 4 * h + o } else { 0 },
            Architecture::Mlstm => 4 * (h * v + h * m) + m * v + m * h + o * h + if extra { 4 * h + o } else { 0 },
            Architecture::StackedMrnn => {
                let mut total = out_bias;
                let mut below = 0;
                for &hl in &self.hidden_sizes {
                    total += 2 * hl * v + 2 * hl * hl + o * hl + hl + hl * below;
                    below = hl;
                }
                total
            }
        }
    }
}

use std::ops::Range;

use ndarray::{s, Array2, ArrayView2};

use crate::config::{ModelConfig, OutputMode};
use crate::error::{Error, Result};

/// Per-timestep inputs for `n` sequences.
#[derive(Debug, Clone, PartialEq)]
pub enum Inputs {
    /// Symbol ids, timestep-major: entry `t * n + j` is sequence `j` at `t`.
    Symbols(Vec<u32>),
    /// One `width × n` matrix per timestep.
    Dense(Vec<Array2<f64>>),
}

/// Training targets aligned with [`Inputs`].
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Next-symbol ids (one-hot targets), timestep-major.
    Symbols(Vec<u32>),
    /// Real-valued targets; timesteps with `mask[t] == false` carry no loss.
    Dense { values: Vec<Array2<f64>>, mask: Vec<bool> },
}

/// A set of equal-length sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub steps: usize,
    pub sequences: usize,
    pub inputs: Inputs,
    pub targets: Targets,
}

/// Borrowed input for one timestep across the batch.
#[derive(Debug, Clone, Copy)]
pub enum StepInput<'a> {
    Symbols(&'a [u32]),
    Dense(ArrayView2<'a, f64>),
}

impl Batch {
    /// Text batch from timestep-major input/target ids.
    pub fn symbols(steps: usize, sequences: usize, inputs: Vec<u32>, targets: Vec<u32>) -> Result<Batch> {
        let want = steps * sequences;
        for (name, got) in [("inputs", inputs.len()), ("targets", targets.len())] {
            if got != want {
                return Err(Error::config(format!(
                    "{name} length {got} != steps × sequences = {want}"
                )));
            }
        }
        Ok(Batch {
            steps,
            sequences,
            inputs: Inputs::Symbols(inputs),
            targets: Targets::Symbols(targets),
        })
    }

    /// Builds a text batch from per-sequence `(input, target)` id vectors.
    pub fn from_sequences(seqs: &[(Vec<u32>, Vec<u32>)]) -> Result<Batch> {
        let n = seqs.len();
        let t = seqs.first().map_or(0, |s| s.0.len());
        let mut inputs = vec![0; t * n];
        let mut targets = vec![0; t * n];
        for (j, (x, y)) in seqs.iter().enumerate() {
            if x.len() != t || y.len() != t {
                return Err(Error::config("sequences must have equal length"));
            }
            for s in 0..t {
                inputs[s * n + j] = x[s];
                targets[s * n + j] = y[s];
            }
        }
        Batch::symbols(t, n, inputs, targets)
    }

    pub fn input(&self, t: usize) -> StepInput<'_> {
        let n = self.sequences;
        match &self.inputs {
            Inputs::Symbols(ids) => StepInput::Symbols(&ids[t * n..(t + 1) * n]),
            Inputs::Dense(m) => StepInput::Dense(m[t].view()),
        }
    }

    pub fn has_target(&self, t: usize) -> bool {
        match &self.targets {
            Targets::Symbols(_) => true,
            Targets::Dense { mask, .. } => mask[t],
        }
    }

    pub fn target_symbols(&self, t: usize) -> Option<&[u32]> {
        let n = self.sequences;
        match &self.targets {
            Targets::Symbols(ids) => Some(&ids[t * n..(t + 1) * n]),
            Targets::Dense { .. } => None,
        }
    }

    /// Input ids of sequence `j`, if this is a symbol batch.
    pub fn sequence_inputs(&self, j: usize) -> Option<Vec<u32>> {
        match &self.inputs {
            Inputs::Symbols(ids) => Some((0..self.steps).map(|t| ids[t * self.sequences + j]).collect()),
            Inputs::Dense(_) => None,
        }
    }

    pub fn sequence_targets(&self, j: usize) -> Option<Vec<u32>> {
        match &self.targets {
            Targets::Symbols(ids) => Some((0..self.steps).map(|t| ids[t * self.sequences + j]).collect()),
            Targets::Dense { .. } => None,
        }
    }

    /// Number of `(t, sequence)` pairs that carry a target.
    pub fn target_count(&self) -> usize {
        (0..self.steps).filter(|&t| self.has_target(t)).count() * self.sequences
    }

    /// The sequences at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Batch {
        let n = self.sequences;
        let pick_ids = |ids: &[u32]| {
            (0..self.steps)
                .flat_map(|t| indices.iter().map(move |&j| ids[t * n + j]))
                .collect::<Vec<_>>()
        };
        let pick_cols = |mats: &[Array2<f64>]| {
            mats.iter()
                .map(|m| m.select(ndarray::Axis(1), indices))
                .collect::<Vec<_>>()
        };
        Batch {
            steps: self.steps,
            sequences: indices.len(),
            inputs: match &self.inputs {
                Inputs::Symbols(ids) => Inputs::Symbols(pick_ids(ids)),
                Inputs::Dense(m) => Inputs::Dense(pick_cols(m)),
            },
            targets: match &self.targets {
                Targets::Symbols(ids) => Targets::Symbols(pick_ids(ids)),
                Targets::Dense { values, mask } => Targets::Dense {
                    values: pick_cols(values),
                    mask: mask.clone(),
                },
            },
        }
    }

    /// Contiguous sequence range as its own batch.
    pub fn columns(&self, range: Range<usize>) -> Batch {
        let n = self.sequences;
        let ids = |v: &[u32]| {
            (0..self.steps)
                .flat_map(|t| v[t * n + range.start..t * n + range.end].iter().copied())
                .collect::<Vec<_>>()
        };
        let cols = |mats: &[Array2<f64>]| {
            mats.iter()
                .map(|m| m.slice(s![.., range.clone()]).to_owned())
                .collect::<Vec<_>>()
        };
        Batch {
            steps: self.steps,
            sequences: range.len(),
            inputs: match &self.inputs {
                Inputs::Symbols(v) => Inputs::Symbols(ids(v)),
                Inputs::Dense(m) => Inputs::Dense(cols(m)),
            },
            targets: match &self.targets {
                Targets::Symbols(v) => Targets::Symbols(ids(v)),
                Targets::Dense { values, mask } => Targets::Dense {
                    values: cols(values),
                    mask: mask.clone(),
                },
            },
        }
    }

    /// Splits into at most `parts` contiguous, near-equal sequence groups.
    pub fn split(&self, parts: usize) -> Vec<Batch> {
        chunk_ranges(self.sequences, parts)
            .into_iter()
            .map(|r| self.columns(r))
            .collect()
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.steps == 0 || self.sequences == 0 {
            return Err(Error::config("batch must contain at least one step and sequence"));
        }
        let v = config.vocab_size as u32;
        match &self.inputs {
            Inputs::Symbols(ids) => {
                if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
                    return Err(Error::config(format!("input symbol {bad} >= vocab size {v}")));
                }
            }
            Inputs::Dense(m) => {
                if m.len() != self.steps || m.iter().any(|x| x.dim() != (config.vocab_size, self.sequences)) {
                    return Err(Error::config("dense inputs must be vocab_size × sequences per step"));
                }
            }
        }
        match &self.targets {
            Targets::Symbols(ids) => {
                let o = config.output_width() as u32;
                if let Some(&bad) = ids.iter().find(|&&id| id >= o) {
                    return Err(Error::config(format!("target symbol {bad} >= output width {o}")));
                }
            }
            Targets::Dense { values, mask } => {
                if config.output_mode != OutputMode::LinearMse {
                    return Err(Error::config("dense targets require linear_mse output"));
                }
                if mask.len() != self.steps
                    || values.len() != self.steps
                    || values
                        .iter()
                        .any(|x| x.dim() != (config.output_width(), self.sequences))
                {
                    return Err(Error::config("dense targets must be output × sequences per step"));
                }
            }
        }
        Ok(())
    }
}

/// Splits `0..n` into at most `parts` contiguous ranges whose lengths differ
/// by at most one.
pub fn chunk_ranges(n: usize, parts: usize) -> Vec<Range<usize>> {
    let parts = parts.clamp(1, n.max(1));
    let base = n / parts;
    let extra = n % parts;
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .filter(|r| !r.is_empty())
        .collect()
}

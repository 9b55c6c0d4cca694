//! Flat parameter vectors and their per-matrix layout.
//!
//! Every architecture stores all of its weights in one contiguous `Vec<f64>`.
//! A [`Layout`] names the matrix blocks inside it, in a fixed order per
//! architecture (see [`Layout::new`]), so checkpoints stay portable.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::config::{Architecture, ModelConfig};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Role of a block, used by initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Weight,
    /// The dense hidden-to-hidden matrix of an `rnn` or `lstm`.
    Recurrent,
    Bias,
}

/// One row-major matrix inside the parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockDesc {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub kind: BlockKind,
}

impl BlockDesc {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered block descriptors that partition a parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    blocks: Vec<BlockDesc>,
    len: usize,
}

struct LayoutBuilder {
    blocks: Vec<BlockDesc>,
    offset: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize, kind: BlockKind) {
        self.blocks.push(BlockDesc {
            name: name.into(),
            rows,
            cols,
            offset: self.offset,
            kind,
        });
        self.offset += rows * cols;
    }

    fn weight(&mut self, name: impl Into<String>, rows: usize, cols: usize) {
        self.push(name, rows, cols, BlockKind::Weight);
    }

    fn bias(&mut self, name: impl Into<String>, rows: usize) {
        self.push(name, rows, 1, BlockKind::Bias);
    }
}

impl Layout {
    /// Builds the layout for `config`.
    ///
    /// Block order (`h` hidden, `m` factor, `V` input, `O` output width):
    ///
    /// * rnn: `W_hi W_hh W_oh B_h`
    /// * lstm: `W_hi W_hh W_omega_i W_omega_h W_phi_i W_phi_h W_rho_i W_rho_h W_oh`
    /// * mrnn: `W_hi W_mi W_mh W_hm W_oh B_h`
    /// * stacked_mrnn, per layer `l`: `W_m{l}i W_m{l}h W_h{l}i W_h{l}m [W_h{l}h] W_o{l}h B_h{l}`
    /// * mlstm: `W_hi W_omega_i W_phi_i W_rho_i W_hm W_omega_m W_phi_m W_rho_m W_mi W_mh W_oh`
    ///
    /// With `extra_biases`, gated cells append `B_in B_omega B_phi B_rho`, and
    /// every architecture appends `B_o` last.
    pub fn new(config: &ModelConfig) -> Result<Layout> {
        config.validate()?;
        let v = config.vocab_size;
        let o = config.output_width();
        let h = config.hidden_sizes[0];
        let m = config.factor_size.unwrap_or(0);
        let mut b = LayoutBuilder {
            blocks: Vec::new(),
            offset: 0,
        };
        match config.architecture {
            Architecture::Rnn => {
                b.weight("W_hi", h, v);
                b.push("W_hh", h, h, BlockKind::Recurrent);
                b.weight("W_oh", o, h);
                b.bias("B_h", h);
            }
            Architecture::Lstm => {
                b.weight("W_hi", h, v);
                b.push("W_hh", h, h, BlockKind::Recurrent);
                for gate in ["omega", "phi", "rho"] {
                    b.weight(format!("W_{gate}_i"), h, v);
                    b.weight(format!("W_{gate}_h"), h, h);
                }
                b.weight("W_oh", o, h);
            }
            Architecture::Mrnn => {
                b.weight("W_hi", h, v);
                b.weight("W_mi", m, v);
                b.weight("W_mh", m, h);
                b.weight("W_hm", h, m);
                b.weight("W_oh", o, h);
                b.bias("B_h", h);
            }
            Architecture::StackedMrnn => {
                let mut below = 0;
                for (l, &hl) in config.hidden_sizes.iter().enumerate() {
                    let l1 = l + 1;
                    b.weight(format!("W_m{l1}i"), hl, v);
                    b.weight(format!("W_m{l1}h"), hl, hl);
                    b.weight(format!("W_h{l1}i"), hl, v);
                    b.weight(format!("W_h{l1}m"), hl, hl);
                    if l > 0 {
                        b.weight(format!("W_h{l1}h"), hl, below);
                    }
                    b.weight(format!("W_o{l1}h"), o, hl);
                    b.bias(format!("B_h{l1}"), hl);
                    below = hl;
                }
            }
            Architecture::Mlstm => {
                b.weight("W_hi", h, v);
                for gate in ["omega", "phi", "rho"] {
                    b.weight(format!("W_{gate}_i"), h, v);
                }
                b.weight("W_hm", h, m);
                for gate in ["omega", "phi", "rho"] {
                    b.weight(format!("W_{gate}_m"), h, m);
                }
                b.weight("W_mi", m, v);
                b.weight("W_mh", m, h);
                b.weight("W_oh", o, h);
            }
        }
        if config.extra_biases {
            if config.architecture.is_gated() {
                for name in ["B_in", "B_omega", "B_phi", "B_rho"] {
                    b.bias(name, h);
                }
            }
            b.bias("B_o", o);
        }
        Ok(Layout {
            len: b.offset,
            blocks: b.blocks,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[BlockDesc] {
        &self.blocks
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub(crate) fn expect(&self, name: &str) -> usize {
        self.index_of(name)
            .unwrap_or_else(|| panic!("layout has no block `{name}`"))
    }

    pub fn block(&self, name: &str) -> Option<&BlockDesc> {
        self.index_of(name).map(|i| &self.blocks[i])
    }

    /// Zero-copy matrix views of every block of `theta`.
    pub fn views<'a>(&self, theta: &'a [f64]) -> Vec<ArrayView2<'a, f64>> {
        debug_assert_eq!(theta.len(), self.len);
        self.blocks
            .iter()
            .map(|b| {
                ArrayView2::from_shape((b.rows, b.cols), &theta[b.range()]).expect("block shape matches its slice")
            })
            .collect()
    }

    /// Owned zero matrices shaped like every block.
    pub fn zeros(&self) -> Vec<Array2<f64>> {
        self.blocks.iter().map(|b| Array2::zeros((b.rows, b.cols))).collect()
    }

    pub fn unflatten(&self, theta: &[f64]) -> Result<Vec<Array2<f64>>> {
        self.check_len("unflatten", theta.len())?;
        Ok(self.views(theta).into_iter().map(|v| v.to_owned()).collect())
    }

    pub fn flatten(&self, mats: &[Array2<f64>]) -> Result<Vec<f64>> {
        if mats.len() != self.blocks.len() {
            return Err(Error::Dimension {
                context: "flatten block count",
                expected: self.blocks.len(),
                got: mats.len(),
            });
        }
        let mut out = Vec::with_capacity(self.len);
        for (b, m) in self.blocks.iter().zip(mats) {
            if m.dim() != (b.rows, b.cols) {
                return Err(Error::Dimension {
                    context: "flatten block shape",
                    expected: b.len(),
                    got: m.len(),
                });
            }
            out.extend(m.iter().copied());
        }
        Ok(out)
    }

    pub(crate) fn check_len(&self, context: &'static str, got: usize) -> Result<()> {
        if got == self.len {
            Ok(())
        } else {
            Err(Error::Dimension {
                context,
                expected: self.len,
                got,
            })
        }
    }
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitScheme {
    /// Every weight `~ N(0, std²)`.
    Dense { std: f64 },
    /// The dense recurrent matrix is zero with probability `p_zero` and
    /// `N(0, std²)` otherwise; other weights are `N(0, others_std²)`.
    SparseRecurrent { p_zero: f64, std: f64, others_std: f64 },
}

impl InitScheme {
    pub fn sparse_recurrent() -> Self {
        InitScheme::SparseRecurrent {
            p_zero: 0.9,
            std: 0.1,
            others_std: 0.1,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let (name, arg) = s.split_once(':').unwrap_or((s, ""));
        match name {
            "dense" => {
                let std = if arg.is_empty() {
                    0.1
                } else {
                    arg.parse()
                        .map_err(|_| Error::config(format!("bad dense std `{arg}`")))?
                };
                Ok(InitScheme::Dense { std })
            }
            "sparse_recurrent" if arg.is_empty() => Ok(InitScheme::sparse_recurrent()),
            _ => Err(Error::config(format!("unknown init scheme `{s}`"))),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            InitScheme::Dense { std } => std.is_finite() && std >= 0.0,
            InitScheme::SparseRecurrent {
                p_zero,
                std,
                others_std,
            } => {
                (0.0..=1.0).contains(&p_zero)
                    && std.is_finite()
                    && std >= 0.0
                    && others_std.is_finite()
                    && others_std >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid init scheme {self:?}")))
        }
    }
}

/// A parameter vector together with the layout that names its blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub layout: Layout,
    pub theta: Vec<f64>,
}

impl ParameterSet {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        let layout = Layout::new(config)?;
        Ok(ParameterSet {
            theta: vec![0.0; layout.len()],
            layout,
        })
    }

    pub fn from_theta(config: &ModelConfig, theta: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(config)?;
        layout.check_len("parameter vector", theta.len())?;
        Ok(ParameterSet { layout, theta })
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Slice of `theta` belonging to the named block.
    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.block(name).map(|b| &self.theta[b.range()])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.block(name)?.range();
        Some(&mut self.theta[range])
    }

    /// Returns `θ + scale·direction`, leaving `self` untouched.
    pub fn axpy(&self, direction: &[f64], scale: f64) -> Result<ParameterSet> {
        self.layout.check_len("axpy direction", direction.len())?;
        let theta = self.theta.iter().zip(direction).map(|(t, d)| t + scale * d).collect();
        Ok(ParameterSet {
            layout: self.layout.clone(),
            theta,
        })
    }
}

/// Draws an initial parameter vector; biases always start at zero.
pub fn init_params(config: &ModelConfig, scheme: InitScheme, rng: &mut Rng) -> Result<ParameterSet> {
    scheme.validate()?;
    let mut params = ParameterSet::zeros(config)?;
    for block in params.layout.blocks().to_vec() {
        let slice = &mut params.theta[block.range()];
        match (block.kind, scheme) {
            (BlockKind::Bias, _) => {}
            (_, InitScheme::Dense { std }) => slice.iter_mut().for_each(|w| *w = std * rng.normal()),
            (BlockKind::Recurrent, InitScheme::SparseRecurrent { p_zero, std, .. }) => {
                for w in slice.iter_mut() {
                    *w = if rng.uniform() < p_zero {
                        0.0
                    } else {
                        std * rng.normal()
                    };
                }
            }
            (_, InitScheme::SparseRecurrent { others_std, .. }) => {
                slice.iter_mut().for_each(|w| *w = others_std * rng.normal())
            }
        }
    }
    Ok(params)
}

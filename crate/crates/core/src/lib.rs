//! Hessian-free training of recurrent character-level sequence models.
//!
//! The crate covers five architectures (tanh RNN, LSTM, multiplicative RNN,
//! stacked multiplicative RNN and multiplicative LSTM), their exact
//! gradients and Gauss–Newton curvature products, a matrix-free conjugate
//! gradient optimizer with structural and line-search damping, character
//! corpora and synthetic tasks, sampling probes, and brute-force oracles
//! that check all of the above.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod models;
pub mod optimizer;
pub mod parallel;
pub mod params;
pub mod rng;
pub mod verify;

pub use config::{Architecture, ModelConfig, OutputMode};
pub use error::{Error, Result};
pub use models::{Batch, CurvatureContext, EvalOptions, Model};
pub use params::{init_params, InitScheme, Layout, ParameterSet};
pub use rng::Rng;

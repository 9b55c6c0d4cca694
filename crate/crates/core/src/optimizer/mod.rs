//! Conjugate gradient, damping, line searches, the Hessian-free outer loop
//! and a momentum SGD baseline.

mod cg;
mod damping;
mod hf;
mod linesearch;
mod sgd;
mod train;

pub use cg::{
    conjugate_gradient, progress_stalled, CgHook, CgOptions, CgOutcome, CgStep, CgTrace, HookAction, NoHook, StopReason,
};
pub use damping::{adjust_mu, DampingMode, DampingState, MuRule};
pub use hf::{
    cg_with_linesearch_damping, fmt_float, hf_train_step, linesearch_cg, metrics_for, HfOptions, IterationMetrics,
    StepReport, TrainState,
};
pub use linesearch::{backtracking_line_search, LineSearchOptions, LineSearchResult};
pub use sgd::{momentum_update, sgd_iteration, sgd_momentum_step, SgdOptions};
pub use train::{train, train_loop, TrainOptions, TrainStop};

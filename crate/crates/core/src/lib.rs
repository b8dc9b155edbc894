//! Range-relaxed nonstationary iterated Tikhonov regularization.
//!
//! Solves linear ill-posed problems `A x = y` from noisy data `y_delta`,
//! `||y_delta - y|| <= delta`, by the iteration
//!
//! ```text
//! x_k = argmin_x  lambda_k ||A x - y_delta||^2 + ||x - x_{k-1}||^2
//! ```
//!
//! with three multiplier rules: range-relaxed (each `lambda_k` is any value
//! putting the new residual inside `[delta, p r_{k-1} + (1 - p) delta]`),
//! geometric (`lambda_k = q^k`) and stationary (`lambda_k = lambda_bar`).
//! Runs stop by the discrepancy principle and record the accumulated number
//! of SPD linear solves as their cost.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod grid;
pub mod batch;
pub mod io;
pub mod iteration;
pub mod linop;
pub mod multiplier;
pub mod problems;
pub mod tikhonov;
pub mod vector;

pub use error::{Error, Result};
pub use exec::Mode;
pub use grid::Grid;
pub use iteration::{
    run, run_gnit, run_rrnit, run_sit, verify_trace, IterationRecord, Method, RunTrace,
    SolverConfig, StopReason, VerifyReport,
};
pub use linop::{
    gaussian_psf, hilbert_operator, operator_norm_estimate, Boundary, ConvolutionOperator,
    DenseOperator, LinearOperator,
};
pub use multiplier::{MultiplierOptions, MultiplierResult, RangeTarget, WarmStart};
pub use problems::{Problem, ProblemSpec};
pub use tikhonov::{SolveOptions, SolveStats, StepResult};

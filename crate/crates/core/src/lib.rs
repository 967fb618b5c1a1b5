//! Nonlinear least squares toolkit.
//!
//! The crate has three layers:
//!
//! * classical solvers — Gauss-Newton and Levenberg-Marquardt over a generic
//!   [`problem::LeastSquaresProblem`], backed by the dense linear algebra in
//!   [`linalg`];
//! * a learned optimizer — an LSTM (dense problems) or convolutional LSTM
//!   (per-pixel problems) that predicts parameter updates from the
//!   `[JᵀJ, Jᵀr, E]` feature transform, trained by backpropagation through the
//!   unrolled solve loop ([`learned`], [`train`]);
//! * two problem domains — synthetic two-parameter curve fitting ([`curves`])
//!   and two-view photometric depth+pose estimation with structured Jacobians
//!   ([`photo`]).

pub mod bench;
pub mod classical;
pub mod curves;
pub mod learned;
pub mod linalg;
pub mod photo;
pub mod problem;
pub mod rng;
pub mod timing;
pub mod train;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("matrix is not symmetric (max asymmetry {max_asym:.3e})")]
    NotSymmetric { max_asym: f64 },
    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("non-finite evaluation in {0}")]
    NonFiniteEvaluation(&'static str),
    #[error("invalid sigma {0} (must be >= 0)")]
    InvalidSigma(f64),
    #[error("parameter outside family domain: {0}")]
    DomainError(String),
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("feature layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("model version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("non-finite gradient at outer step {step}")]
    NonFiniteGradient { step: usize },
    #[error("degenerate scene: only {visible_fraction:.1}% of pixels mutually visible")]
    DegenerateScene { visible_fraction: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

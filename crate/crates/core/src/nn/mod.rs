//! Minimal deterministic feed-forward network kernel.
//!
//! Everything is `f32`, row-major, and accumulated in a fixed order so that
//! two runtimes executing the same batches from the same seed produce
//! bit-identical weights:
//!
//! * forward: `y[r][o] = (sum_i w[o][i] * x[r][i]) + b[o]`, `i` ascending,
//!   accumulator starts at `0.0`;
//! * weight gradient: `dw[o][i] = sum_r g[r][o] * x[r][i]`, `r` ascending;
//! * bias gradient: `db[o] = sum_r g[r][o]`, `r` ascending;
//! * input gradient: `dx[r][i] = sum_o g[r][o] * w[o][i]`, `o` ascending;
//! * update: `w = w - lr * dw`.

mod layer;
mod matrix;
mod network;
mod rng;

pub use layer::{Layer, LayerGrad, LayerKind};
pub use matrix::Matrix;
pub use network::{Loss, Network, Trace};
pub use rng::SplitMix64;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("freeze prefix {k} out of range for {parameterized} parameterized layers")]
    OutOfRange { k: usize, parameterized: usize },
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: f32, classes: usize },
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Default hidden widths of the PREDICT model.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 32];

/// Default SGD learning rate.
pub const DEFAULT_LR: f32 = 0.01;

// SPDX-License-Identifier: Apache-2.0
use thiserror::Error;

/// Errors produced by the structure-learning library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("(I - B) is singular or near-singular (|det| = {0:e})")]
    NearSingular(f64),

    #[error("acyclicity function evaluated outside its domain: {0}")]
    OutOfDomain(String),

    #[error("graph contains a directed cycle")]
    Cyclic,

    #[error("column `{0}` has zero sample variance")]
    ZeroVariance(String),

    #[error("objective is not finite at the starting point")]
    NonFiniteStart,

    #[error("p = {p} exceeds the enumeration cap of {cap}")]
    CapacityExceeded { p: usize, cap: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

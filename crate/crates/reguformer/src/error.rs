//! Error taxonomy shared by every module of the crate.
//!
//! Variants map onto the failure classes the public operations promise:
//! shape/contract violations, configuration problems, malformed or
//! inconsistent input data, file-format trouble, numeric domain errors and
//! runtime numerical degeneracies, and metric preconditions.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not line up for the requested operation.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A caller violated an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Input data is malformed or inconsistent.
    #[error("data error: {0}")]
    Data(String),

    /// A serialized artifact cannot be read back.
    #[error("format error: {0}")]
    Format(String),

    /// A metric cannot be computed on the given inputs.
    #[error("metric error: {0}")]
    Metric(String),

    /// Math domain violation (e.g. log of a non-positive value).
    #[error("domain error: {0}")]
    Domain(String),

    /// A computation degenerated numerically (NaN loss, vanishing normalizer).
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

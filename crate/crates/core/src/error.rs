use thiserror::Error;

/// Errors raised by the simulation, quantization and solver layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A simulated state became non-finite.
    #[error("non-finite state at jump {jump}")]
    NonFinite { jump: usize },

    /// A requested time or stage lies outside what is available.
    #[error("out of range: {0}")]
    Range(String),

    /// Invalid input data (empty sample sets, too few distinct samples, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// Inconsistent configuration or mismatched artifacts.
    #[error("configuration error: {0}")]
    Config(String),

    /// Corrupt or incompatible persisted artifact.
    #[error("artifact format error: {0}")]
    Format(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

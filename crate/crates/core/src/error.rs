//! Crate-wide error type.
//!
//! The CLI maps these onto process exit codes, so the variants are grouped by
//! failure class rather than by module: configuration problems, missing
//! pipeline prerequisites, numeric divergence, and plain I/O or format errors.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing prerequisite {path}: run `reachguard {producer}` first")]
    MissingPrerequisite { path: PathBuf, producer: String },

    #[error("numeric divergence in {context}: {detail}")]
    Divergence { context: String, detail: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("query outside grid bounds: dim {dim} value {value}")]
    OutOfBounds { dim: usize, value: f64 },

    #[error("policy evaluation failed at t={t}s: {source}")]
    PolicyAt {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("file format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::MissingPrerequisite { .. } => 3,
            Error::Divergence { .. } => 4,
            _ => 1,
        }
    }
}

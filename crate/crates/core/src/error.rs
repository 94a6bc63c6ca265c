use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("res must be even and ≥ 8 (got {0})")]
    InvalidResolution(usize),

    #[error("dim must be between 1 and 8 (got {0})")]
    InvalidDimension(usize),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("norm {kind} is only defined for scalar fields")]
    NormKind { kind: &'static str },

    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),

    #[error("MaxExcess level M must be ≥ 1 (got {0})")]
    InvalidExcessLevel(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dt = {dt:e} violates the explicit stability bound dt ≤ 0.5·h²/(2n(1+ε)) = {bound:e}")]
    Stability { dt: f64, bound: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("insufficient valid paths: need at least {needed}, have {have}")]
    InsufficientPaths { needed: usize, have: usize },

    #[error("trace is missing required data: {0}")]
    MissingTraceData(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("ensemble invalid: {diverged} of {total} paths diverged")]
    EnsembleDiverged { diverged: usize, total: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

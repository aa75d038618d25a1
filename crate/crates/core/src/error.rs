use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced in {0}")]
    NonFinite(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("tape does not match the requested range: {0}")]
    TapeMismatch(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid aggregation weights: {0}")]
    InvalidWeights(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),

    #[error("scheduling error: {0}")]
    Schedule(String),

    #[error("grouping error: {0}")]
    Grouping(String),

    #[error("unknown client {0}")]
    UnknownClient(usize),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("{path}: row {row}: {msg}")]
    Csv { path: PathBuf, row: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

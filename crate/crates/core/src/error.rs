use std::path::PathBuf;

use thiserror::Error;

/// Shape and contract violations raised by tensor and layer operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid mask: row {row} has no allowed entry")]
    InvalidMask { row: usize },
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("ingestion error at row {row}: {msg}")]
    Ingest { row: usize, msg: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("timestamps not strictly increasing at row {row}")]
    NonMonotonic { row: usize },
    #[error("range error: {0}")]
    Range(String),
    #[error("degenerate scaler: series is constant ({0})")]
    DegenerateScaler(f64),
    #[error("unknown season `{0}`")]
    UnknownSeason(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("fetch failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint ({field}): {msg}")]
    Corrupt { field: String, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CheckpointError {
    pub(crate) fn corrupt(field: impl Into<String>, msg: impl Into<String>) -> Self {
        CheckpointError::Corrupt {
            field: field.into(),
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient in parameter `{0}`")]
    NanGradient(String),
    #[error("training diverged at epoch {epoch}; restored parameters from epoch {restored_epoch}")]
    Diverged { epoch: usize, restored_epoch: usize },
    #[error("empty training set")]
    EmptyTrainSet,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric contract: {0}")]
    Contract(String),
    #[error("improvement undefined when baseline and model metrics are both zero")]
    UndefinedImprovement,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("config line {line}: bad value for `{key}`: {msg}")]
    BadValue { key: String, line: usize, msg: String },
    #[error("flag --{key}: {msg}")]
    BadFlag { key: String, msg: String },
    #[error("config line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("io error reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

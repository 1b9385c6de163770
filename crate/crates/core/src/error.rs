use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the model, its data layer and the command-line pipeline.
#[derive(Debug, Error)]
pub enum CfmError {
    /// A required column is absent or the schema document is malformed.
    #[error("schema error: {0}")]
    Schema(String),

    /// Input data violates a domain constraint.
    #[error("validation error: {0}")]
    Validation(String),

    /// Model or scenario configuration is out of range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Every unnormalized allocation probability underflowed or became non-finite.
    #[error("degenerate cluster allocation for unit {unit}, factor {factor}")]
    DegenerateAllocation { unit: usize, factor: usize },

    /// A Gibbs block produced a non-finite value.
    #[error("non-finite value after block `{block}` in sweep {sweep}")]
    NonFinite { sweep: usize, block: &'static str },

    /// A precision matrix that must be positive definite was not.
    #[error("matrix not positive definite in {0}")]
    NotPositiveDefinite(&'static str),

    /// A numerical failure inside a Gibbs block, located by sweep.
    #[error("block `{block}` failed in sweep {sweep}: {source}")]
    InBlock {
        sweep: usize,
        block: &'static str,
        #[source]
        source: Box<CfmError>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, CfmError>;

impl CfmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CfmError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        CfmError::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        CfmError::Json {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line runner.
    ///
    /// 2 validation, 3 numerical abort, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CfmError::Schema(_) | CfmError::Validation(_) | CfmError::Config(_) => 2,
            CfmError::DegenerateAllocation { .. }
            | CfmError::NonFinite { .. }
            | CfmError::NotPositiveDefinite(_) => 3,
            CfmError::InBlock { source, .. } => source.exit_code(),
            CfmError::Io { .. } => 4,
            CfmError::Csv { source, .. } => match source.kind() {
                csv::ErrorKind::Io(_) => 4,
                _ => 2,
            },
            CfmError::Json { source, .. } => {
                if source.is_io() {
                    4
                } else {
                    2
                }
            }
        }
    }
}

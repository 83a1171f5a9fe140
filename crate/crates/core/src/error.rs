// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

/// Coarse error classes. The CLI maps each to a distinct exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Config,
    Numeric,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: csv error: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: no data rows")]
    NoDataRows { path: PathBuf },
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("column {0} has no non-empty values")]
    EmptyColumn(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero-norm vector at instance {0}")]
    ZeroVector(usize),
    #[error("duplicate key {0}")]
    DuplicateKey(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("not enough training data: {0}")]
    InsufficientData(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("bad model/index file: {0}")]
    Format(String),
    #[error("unknown table or query {0}")]
    UnknownTable(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. }
            | Error::Csv { .. }
            | Error::NoDataRows { .. }
            | Error::Malformed(_)
            | Error::EmptyColumn(_)
            | Error::Format(_)
            | Error::UnknownTable(_)
            | Error::DuplicateKey(_) => ErrorCategory::Input,
            Error::DimensionMismatch { .. } | Error::Config(_) | Error::InsufficientData(_) => ErrorCategory::Config,
            Error::ZeroVector(_) | Error::NonFinite(_) => ErrorCategory::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

use thiserror::Error;

use crate::array::ArrayError;
use crate::classifier::ClassifierError;
use crate::encoder::EncoderError;
use crate::etf::EtfError;
use crate::metrics::MetricsError;
use crate::semantics::CsgError;
use crate::styles::TrainError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-wide error, one variant per subsystem.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Etf(#[from] EtfError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Semantics(#[from] CsgError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Array(#[from] ArrayError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("config error at `{path}`: {detail}")]
    Config { path: String, detail: String },

    #[error("format error in {source_name}: {detail}")]
    Format { source_name: String, detail: String },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("state error: {0}")]
    State(String),

    #[error("training error: {detail}")]
    Training {
        detail: String,
        /// Last checkpoint known to be good, if any was written.
        last_good: Option<PathBuf>,
    },

    #[error("data error in {source_name}: {detail}")]
    Data { source_name: String, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub fn format(source_name: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            source_name: source_name.into(),
            detail: detail.into(),
        }
    }

    pub fn data(source_name: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Data {
            source_name: source_name.into(),
            detail: detail.into(),
        }
    }

    pub fn metric(msg: impl Into<String>) -> Self {
        Error::Metric(msg.into())
    }

    pub fn training(detail: impl Into<String>) -> Self {
        Error::Training {
            detail: detail.into(),
            last_good: None,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

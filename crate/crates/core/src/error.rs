use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-wide error for data- and configuration-level failures.
///
/// Programmer errors (violated call contracts) panic instead; see the
/// crate docs for the convention.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec failure on {path}: {detail}")]
    Codec { path: PathBuf, detail: String },

    #[error("parse error in {path} (line {line}): {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error(
        "image hosts {blocks} usable blocks for {bits} message bits; \
         need at least {needed} blocks per bit"
    )]
    Capacity {
        blocks: usize,
        bits: usize,
        needed: usize,
    },

    #[error("degenerate corpus for metric `{metric}`: q10 == q90 == {value}")]
    DegenerateCorpus { metric: String, value: f64 },

    #[error(
        "surrogate training could not separate the classes: \
         train accuracy {accuracy:.3} is below the {floor:.2} floor"
    )]
    DegenerateTraining { accuracy: f64, floor: f64 },

    #[error("ingestion: {0}")]
    Ingest(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// Adapter for `map_err` on filesystem calls.
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Error {
        Error::Invalid(msg.into())
    }
}

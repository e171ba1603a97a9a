use std::path::PathBuf;

use thiserror::Error;

use crate::model::Timestamp;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty event stream")]
    EmptyStream,

    #[error("events with t_start > t_end at indices {0:?}")]
    InvalidEvents(Vec<usize>),

    #[error("node id {node} out of range for {num_nodes} nodes")]
    NodeOutOfRange { node: u32, num_nodes: usize },

    #[error("timestamp {t} outside [{lo}, {hi}]")]
    OutOfRange { t: Timestamp, lo: Timestamp, hi: Timestamp },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("split produced an empty {0} part")]
    EmptySplit(&'static str),

    #[error("event {index} (t_start={t_start}, t_end={t_end}) not covered by partition [{lo}, {hi}]")]
    Coverage {
        index: usize,
        t_start: Timestamp,
        t_end: Timestamp,
        lo: Timestamp,
        hi: Timestamp,
    },

    #[error("no candidate granularity yields a gapless snapshot sequence")]
    NoGaplessGranularity,

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("parameters changed during evaluation (checksum {before:#018x} -> {after:#018x})")]
    Leakage { before: u64, after: u64 },

    #[error("score is NaN")]
    NanScore,

    #[error("training error: {0}")]
    Training(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// True for errors caused by the caller's input or configuration rather
    /// than a failure during the run.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Config(_) | Error::Parameter(_) => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        }
    }
}

use std::io;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unknown target {0:?}")]
    UnknownTarget(String),

    #[error("coverage went backwards ({prev} -> {now}); episode bookkeeping is broken")]
    CoverageRegressed { prev: u64, now: u64 },

    #[error("episode already finished; call reset first")]
    EpisodeFinished,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),

    #[error("{path}: {err}")]
    Io { path: PathBuf, err: io::Error },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            err: source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use fpcp_core::Violation;

/// Errors raised while reading, writing or evaluating datasets and artifacts.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: malformed record", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}:{line}: {}", path.display(), join_violations(.violations))]
    InvalidRecord {
        path: PathBuf,
        line: usize,
        violations: Vec<Violation>,
    },
    #[error("{}:{line}: {message}", path.display())]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: malformed artifact", path.display())]
    Artifact {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv output failed")]
    Csv(#[from] csv::Error),
    #[error("json output failed")]
    Json(#[from] serde_json::Error),
    /// Inputs that are individually well formed but do not fit together.
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] fpcp_core::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

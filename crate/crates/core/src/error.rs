use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown ROI `{0}`")]
    UnknownRoi(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad matrix file at offset {offset}: {reason}")]
    MatrixFormat {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("{path}: {reason}")]
    ArtifactFormat { path: PathBuf, reason: String },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("stale artifact `{artifact}`: built from manifest {found}, current is {expected}")]
    StaleArtifact {
        artifact: String,
        found: String,
        expected: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("annotator backend failure: {0}")]
    Backend(String),

    #[error("numerical failure in {op}: {reason}")]
    Numerical { op: String, reason: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code contract: 0 ok, 2 config error, 3 missing artifact,
    /// 4 backend failure. Everything else is a generic failure (1).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidInput(_) => 2,
            Error::MissingArtifact(_) | Error::StaleArtifact { .. } => 3,
            Error::Backend(_) => 4,
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(format!("JSON error: {e}"))
    }
}

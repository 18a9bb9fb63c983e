use thiserror::Error;

/// Errors raised by every stage of the modal pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("assembly failed on element {element}: {reason}")]
    Assembly { element: usize, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("interpolation failed with {modes} fitted modes: condition number {condition:.3e} exceeds {limit:.0e}")]
    InterpolationFailure {
        modes: usize,
        condition: f64,
        limit: f64,
    },

    #[error("ingestion failed at rows {rows:?}: {reason}")]
    Ingestion { rows: Vec<usize>, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Process exit status for the command-line front end.
    ///
    /// 2 = malformed configuration or input, 3 = numerical failure, 4 = I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_)
            | Error::InvalidInput(_)
            | Error::InvalidBasis(_)
            | Error::UndefinedCorrelation(_)
            | Error::Ingestion { .. }
            | Error::Json { .. } => 2,
            Error::Assembly { .. } | Error::Numerical(_) | Error::InterpolationFailure { .. } => 3,
            Error::Io { .. } => 4,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn json(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        if source.is_io() {
            let kind = source.io_error_kind().unwrap_or(std::io::ErrorKind::Other);
            return Error::io(path, std::io::Error::new(kind, source.to_string()));
        }
        Error::Json {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Location of a problem inside a delimited input file.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Origin {
    pub file: Option<PathBuf>,
    /// 1-based data row (the header is row 0).
    pub row: Option<usize>,
}

impl Origin {
    pub fn row(row: usize) -> Self {
        Origin { file: None, row: Some(row) }
    }

    pub fn with_file(mut self, file: impl Into<PathBuf>) -> Self {
        self.file = Some(file.into());
        self
    }
}

impl std::fmt::Display for Origin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.file, self.row) {
            (Some(p), Some(r)) => write!(f, "{}, row {}", p.display(), r),
            (Some(p), None) => write!(f, "{}", p.display()),
            (None, Some(r)) => write!(f, "row {r}"),
            (None, None) => write!(f, "<input>"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{origin}: missing column `{column}`")]
    MissingColumn { origin: Origin, column: String },

    #[error("{origin}: {message}")]
    Row { origin: Origin, message: String },

    #[error("pairing error: {subject}/{behaviour} at {time_s:.1} s: {message}")]
    Pairing {
        subject: String,
        behaviour: String,
        time_s: f64,
        message: String,
    },

    #[error("unknown behaviour code `{0}`")]
    UnknownBehaviour(String),

    #[error("cannot parse `{input}`: {message}")]
    Parse { input: String, message: String },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("rank-deficient design: aliased column(s) {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("{path}: format error: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: data error: {message}")]
    Data { path: PathBuf, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn row(origin: Origin, message: impl Into<String>) -> Self {
        Error::Row { origin, message: message.into() }
    }

    /// Attach a file path to row- and column-level errors.
    pub fn in_file(self, file: impl Into<PathBuf>) -> Self {
        match self {
            Error::MissingColumn { origin, column } => Error::MissingColumn {
                origin: origin.with_file(file),
                column,
            },
            Error::Row { origin, message } => Error::Row {
                origin: origin.with_file(file),
                message,
            },
            other => other,
        }
    }

    /// True when the error stems from user input rather than an internal fault.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Numerical(_))
    }
}

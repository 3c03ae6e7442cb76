use std::fmt;
use std::path::Path;

/// Failure of a pipeline command, split by who has to act on it.
#[derive(Debug)]
pub enum CliError {
    /// Bad input, bad configuration or a missing upstream artifact (exit 2).
    User(String),
    /// A fault in the tool itself (exit 1).
    Internal(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn user(msg: impl Into<String>) -> Self {
        CliError::User(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        CliError::Internal(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 2,
            CliError::Internal(_) => 1,
        }
    }

    /// Library error raised while reading `path`.
    pub fn reading(path: &Path, e: calfplay::Error) -> Self {
        let user = e.is_user_error();
        let e = e.in_file(path);
        let text = e.to_string();
        let shown = path.display().to_string();
        let msg = if text.contains(&shown) { text } else { format!("{shown}: {text}") };
        if user {
            CliError::User(msg)
        } else {
            CliError::Internal(msg)
        }
    }

    pub fn write_failed(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Internal(format!("cannot write {}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::User(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<calfplay::Error> for CliError {
    fn from(e: calfplay::Error) -> Self {
        if e.is_user_error() {
            CliError::User(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

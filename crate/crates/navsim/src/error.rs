use std::path::PathBuf;

/// Errors surfaced by the command-line tool. Everything except `Usage` is a
/// data or validation failure.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{msg}")]
    Usage { msg: String },
    #[error("{}:{line}: {msg}", path.display())]
    Data { path: PathBuf, line: u64, msg: String },
    #[error("{}: {msg}", path.display())]
    File { path: PathBuf, msg: String },
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage { msg: msg.into() }
    }

    pub fn invalid(e: impl std::fmt::Display) -> Self {
        Error::Invalid(e.to_string())
    }

    /// 1 for usage errors, 2 for data and validation errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage { .. } => 1,
            _ => 2,
        }
    }
}

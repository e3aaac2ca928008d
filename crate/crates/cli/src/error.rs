use std::fmt;

/// A command failure and the exit status it maps to.
#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration, missing or malformed inputs: exit status 2.
    Config,
    /// Numeric or other runtime failure: exit status 1.
    Runtime,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Config,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Runtime,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => 2,
            ErrorKind::Runtime => 1,
        }
    }

    /// Prefixes the message with where it happened.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<mtrnn::Error> for CliError {
    fn from(e: mtrnn::Error) -> Self {
        let kind = if e.is_config() { ErrorKind::Config } else { ErrorKind::Runtime };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Wraps an error from writing outputs.
pub fn write_error(path: &std::path::Path, e: impl fmt::Display) -> CliError {
    CliError::runtime(format!("cannot write {}: {e}", path.display()))
}

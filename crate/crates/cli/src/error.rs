use std::fmt;

use mvpolymer::Error;

/// Failure of a subcommand, carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad or missing configuration, unreadable input, unwritable output.
    Config(String),
    /// A numeric contract of the core library was violated during a run.
    Numeric(String),
    /// A self-test property failed.
    Property(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Property(_) => 3,
        }
    }

    pub fn io(path: &std::path::Path, e: impl fmt::Display) -> Self {
        CliError::Config(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric contract violation: {m}"),
            CliError::Property(m) => write!(f, "property failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Errors raised while a run is in progress.
impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) => CliError::Config(e.to_string()),
            e => CliError::Numeric(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

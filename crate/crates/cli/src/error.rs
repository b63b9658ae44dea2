use std::fmt;

/// Failures that stop a run, each with its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys, or preconditions the caller can fix. Exit 2.
    Usage(String),
    /// Invalid model, unsupported model for a suite, or an I/O failure. Exit 3.
    Model(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Model(_) => 3,
        }
    }

    pub fn io(context: impl fmt::Display, err: impl fmt::Display) -> Self {
        CliError::Model(format!("{context}: {err}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Model(m) => write!(f, "model error: {m}"),
        }
    }
}

impl From<snell_mesh::Error> for CliError {
    fn from(e: snell_mesh::Error) -> Self {
        use snell_mesh::Error::*;
        match e {
            Contract(_) | InsufficientRuns { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Model(e.to_string()),
        }
    }
}

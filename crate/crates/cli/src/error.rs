use std::fmt;

/// Failure classes with stable exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or malformed input data.
    Data(String),
    /// Every violation found in the configuration.
    Config(Vec<String>),
    Checkpoint(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Data(_) => 2,
            CliError::Config(_) => 3,
            CliError::Checkpoint(_) => 4,
            CliError::Internal(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Config(v) => {
                write!(f, "config error ({} violation{}):", v.len(), if v.len() == 1 { "" } else { "s" })?;
                for m in v {
                    write!(f, "\n  - {m}")?;
                }
                Ok(())
            }
            CliError::Checkpoint(m) => write!(f, "checkpoint error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<mcnn::Error> for CliError {
    fn from(e: mcnn::Error) -> Self {
        use mcnn::Error as E;
        match e {
            E::Config(m) => CliError::Config(vec![m]),
            E::Checkpoint(m) => CliError::Checkpoint(m),
            E::Dimension { .. } | E::LabelIndex { .. } => CliError::Internal(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

use std::fmt;
use std::path::PathBuf;

use biqm_core::BiqmError;
use thiserror::Error;

/// Where a configuration value came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Override,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Override => f.write_str("--override"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{origin}: {message}")]
    Syntax { origin: Origin, message: String },
    #[error("{origin}: unknown section [{section}]")]
    UnknownSection { origin: Origin, section: String },
    #[error("{origin}: unknown key `{key}`")]
    UnknownKey { origin: Origin, key: String },
    #[error("{origin}: duplicate key `{key}` (first set on line {first})")]
    DuplicateKey { origin: Origin, key: String, first: usize },
    #[error("{origin}: invalid value for `{key}`: {message}")]
    Value { origin: Origin, key: String, message: String },
    #[error("invalid `{key}`: {message}")]
    Range { key: String, message: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("{}: {message}", path.display())]
    File { path: PathBuf, message: String },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(BiqmError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    CheckFailed(String),
}

impl From<BiqmError> for CliError {
    fn from(e: BiqmError) -> Self {
        match e {
            BiqmError::InvalidParameter { name, reason } => CliError::Config(ConfigError::Range { key: name.to_string(), message: reason }),
            other => CliError::Numerical(other),
        }
    }
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 1 for configuration and input problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Numerical(_) | CliError::CheckFailed(_) => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

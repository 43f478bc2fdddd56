use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey { section: String, key: String, line: usize },
    #[error("missing key `{key}` in [{section}]")]
    MissingKey { section: String, key: String },
    #[error("`{key}` = {value}: {message}")]
    Range {
        key: String,
        value: String,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] slowfast_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("nothing to plot")]
    EmptyData,
}

/// Exit statuses, also listed in `--help`.
pub mod exit {
    pub const CONFIG: i32 = 1;
    pub const NONCONVERGENCE: i32 = 2;
    pub const VALIDATION: i32 = 3;
    pub const IO: i32 = 4;
    pub const PRECONDITION: i32 = 5;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use slowfast_core::Error as E;
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::EmptyData => exit::PRECONDITION,
            CliError::Core(e) if e.is_nonconvergence() => exit::NONCONVERGENCE,
            CliError::Core(e) => match e {
                E::NonStochasticRow { .. }
                | E::NegativeDensity { .. }
                | E::BadEpsilon(_)
                | E::BoundViolated { .. }
                | E::InvalidSystem(_)
                | E::UnknownName(_)
                | E::UnsupportedDimension(_)
                | E::UnsupportedDriver(_) => exit::VALIDATION,
                _ => exit::PRECONDITION,
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

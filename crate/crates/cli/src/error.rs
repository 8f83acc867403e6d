use std::fmt;
use std::path::Path;

use fingan::market_data::DataError;
use fingan::stylized_facts::StatsError;
use fingan::training::TrainError;

/// Failure of one command, classified by its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2: bad flags, config file or parameter values.
    Config(String),
    /// Exit 3: missing, unreadable or malformed input.
    Data(String),
    /// Exit 4: divergence or a numerically degenerate series.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::Data(_) | TrainError::Checkpoint(_) => CliError::Data(e.to_string()),
            TrainError::Diverged { .. } | TrainError::Numeric(_) => {
                CliError::Numeric(e.to_string())
            }
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::ZeroVariance | StatsError::NonFinite => CliError::Numeric(e.to_string()),
            StatsError::Invalid(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

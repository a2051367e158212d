use std::fmt;

use seqmtl::checkpoint::CheckpointError;
use seqmtl::config::ConfigError;
use seqmtl::corpus::CorpusError;
use seqmtl::model::ModelError;
use seqmtl::report::KvError;
use seqmtl::trainer::TrainError;

/// A command failure. The exit code identifies the class; stderr gets one
/// line `error<TAB>class<TAB>message`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// Exit 1: bad flags, config file or config values.
    Config(String),
    /// Exit 2: unreadable or malformed data, checkpoints or reports.
    Data(String),
    /// Exit 3: non-finite loss or gradient during training.
    Diverged(String),
    /// Exit 4: a check failed (gradient check, ablation cell).
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Failed(_) => 4,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Diverged(_) => "diverged",
            CliError::Failed(_) => "failed",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Diverged(m) | CliError::Failed(m) => m,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Messages stay on one line so the record is machine-parsable.
        let msg = self.message().replace(['\n', '\r', '\t'], " ");
        write!(f, "error\t{}\t{}", self.class(), msg)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<KvError> for CliError {
    fn from(e: KvError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Model(_) => CliError::Config(e.to_string()),
            TrainError::Diverged { .. } => CliError::Diverged(e.to_string()),
            TrainError::Corpus(_) | TrainError::Metrics(_) | TrainError::MissingSplit { .. } | TrainError::TagsetMismatch(_) => {
                CliError::Data(e.to_string())
            }
        }
    }
}

pub fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

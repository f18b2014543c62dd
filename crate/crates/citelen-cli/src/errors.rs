//! Error-to-exit-code mapping: 1 for domain errors, 2 for I/O and usage.

use citelen::corpus::CorpusError;
use citelen::heuristics::HeuristicsError;
use citelen::metrics::MetricsError;
use citelen::model::CheckpointError;
use citelen::training::TrainError;
use citelen::vocab::VocabError;

#[derive(Debug)]
pub enum CliError {
    /// Bad data or configuration: exit code 1.
    Domain(String),
    /// Missing/unreadable/unwritable files or bad invocation: exit code 2.
    Io(String),
}

impl CliError {
    pub fn domain(msg: impl Into<String>) -> Self {
        Self::Domain(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> Self {
        Self::Io(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Domain(_) => 1,
            Self::Io(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Domain(m) | Self::Io(m) => f.write_str(m),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } => Self::Io(e.to_string()),
            other => Self::Domain(other.to_string()),
        }
    }
}

impl From<VocabError> for CliError {
    fn from(e: VocabError) -> Self {
        match e {
            VocabError::Io { .. } => Self::Io(e.to_string()),
            other => Self::Domain(other.to_string()),
        }
    }
}

impl From<HeuristicsError> for CliError {
    fn from(e: HeuristicsError) -> Self {
        match e {
            HeuristicsError::Io { .. } => Self::Io(e.to_string()),
            HeuristicsError::Corpus(c) => c.into(),
            other => Self::Domain(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Io { .. } => Self::Io(e.to_string()),
            TrainError::Corpus(c) => c.into(),
            other => Self::Domain(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => Self::Io(e.to_string()),
            other => Self::Domain(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Io { .. } => Self::Io(e.to_string()),
            MetricsError::Corpus(c) => c.into(),
            other => Self::Domain(other.to_string()),
        }
    }
}

impl From<citelen::model::ModelError> for CliError {
    fn from(e: citelen::model::ModelError) -> Self {
        Self::Domain(e.to_string())
    }
}

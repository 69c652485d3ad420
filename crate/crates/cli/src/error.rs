use std::path::PathBuf;

use dart_core::runner::RunError;
use dart_core::stream_io::StreamError;
use dart_core::synthetic::ScenarioError;
use dart_core::theory::TheoryError;
use dart_core::tracker::TrackerError;
use thiserror::Error;

pub const EXIT_IO: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;
pub const EXIT_DEGENERATE: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Stream {
        path: PathBuf,
        #[source]
        source: StreamError,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{}: {detail}", path.display())]
    BadInput { path: PathBuf, detail: String },
    #[error("{context}: {source}")]
    Scenario {
        context: String,
        #[source]
        source: ScenarioError,
    },
    #[error("{}: {source}", path.display())]
    Run {
        path: PathBuf,
        #[source]
        source: RunError,
    },
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Degenerate(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn stream(path: impl Into<PathBuf>, source: StreamError) -> Self {
        match source {
            StreamError::Io(e) => CliError::io(path, e),
            source => CliError::Stream {
                path: path.into(),
                source,
            },
        }
    }

    /// Process exit status: 3 for unreadable or malformed input and failed
    /// writes, 4 for invalid configuration, 5 for data a method cannot use.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Stream { .. } | CliError::Csv { .. } | CliError::BadInput { .. } => EXIT_IO,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Degenerate(_) | CliError::Theory(_) => EXIT_DEGENERATE,
            CliError::Scenario { source, .. } => match source {
                ScenarioError::Parse(_) | ScenarioError::Invalid { .. } => EXIT_CONFIG,
                ScenarioError::SingleClass { .. } | ScenarioError::Unlabeled => EXIT_DEGENERATE,
                ScenarioError::Stream(_) | ScenarioError::Io(_) => EXIT_IO,
            },
            CliError::Run { source, .. } => match source {
                RunError::Stream(_) => EXIT_IO,
                RunError::Tracker(TrackerError::InvalidConfig(_)) => EXIT_CONFIG,
                RunError::Tracker(TrackerError::LayerCount { .. } | TrackerError::DimensionMismatch { .. }) => EXIT_IO,
                RunError::Baseline(dart_core::baselines::BaselineError::BadTemperature(_)) => EXIT_CONFIG,
                _ => EXIT_DEGENERATE,
            },
        }
    }
}

//! Streaming out-of-distribution detection over layered feature batches.
//!
//! A [`Tracker`] keeps an ID and an OOD prototype per monitored layer and
//! scores each incoming batch by relative distance to the two.

pub mod baselines;
pub mod fusion;
pub mod metrics;
pub mod runner;
pub mod stats;
pub mod stream_io;
pub mod synthetic;
pub mod theory;
pub mod tracker;
pub mod vector;

pub use baselines::BaselineKind;
pub use fusion::{DecisionRule, FusionConfig, PseudoLabel};
pub use metrics::{ReportBuilder, RunReport};
pub use runner::{run_stream, Detector, RunOptions, RunOutput};
pub use stream_io::{FeatureBatch, GroundTruth, Matrix, StreamHeader, StreamReader, StreamWriter};
pub use synthetic::{ScenarioGenerator, ScenarioSpec};
pub use tracker::{BatchScores, DualPrototype, Tracker, TrackerConfig};

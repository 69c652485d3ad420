//! Drives one detector over one stream and collects a [`RunReport`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{self, BaselineError, BaselineKind};
use crate::metrics::{MetricsError, ReportBuilder, RunReport};
use crate::stream_io::{FeatureBatch, StreamError, StreamHeader};
use crate::synthetic::axis_alignment;
use crate::tracker::{BatchScores, Tracker, TrackerConfig, TrackerError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("detector {0} needs logits but the stream has none")]
    MissingLogits(&'static str),
    #[error("oracle axes cover {got} layers, stream has {expected}")]
    OracleShape { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "detector", rename_all = "snake_case")]
pub enum Detector {
    Dart(TrackerConfig),
    Baseline(BaselineKind),
}

impl Detector {
    pub fn name(&self) -> &'static str {
        match self {
            Detector::Dart(_) => "dart",
            Detector::Baseline(k) => k.name(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub pooled_metrics: bool,
    /// Reference axis per stream layer; enables per-batch axis cosines.
    pub oracle_axes: Option<Vec<Vec<f64>>>,
    /// Keep every [`BatchScores`] in the output.
    pub keep_scores: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub scores: Vec<BatchScores>,
    /// Final tracker state for `dart`.
    pub tracker: Option<Tracker>,
}

/// Runs `detector` over `batches`, scoring and then evaluating each batch in order.
pub fn run_stream<I>(header: &StreamHeader, batches: I, detector: &Detector, options: &RunOptions) -> Result<RunOutput, RunError>
where
    I: IntoIterator<Item = Result<FeatureBatch, StreamError>>,
{
    if !header.has_logits() {
        return Err(RunError::MissingLogits(detector.name()));
    }
    if let Some(axes) = &options.oracle_axes {
        if axes.len() != header.num_layers() {
            return Err(RunError::OracleShape {
                expected: header.num_layers(),
                got: axes.len(),
            });
        }
    }
    let config = serde_json::to_value(detector).expect("detector config serializes");
    let mut tracker = match detector {
        Detector::Dart(c) => Some(Tracker::new(c.clone(), &header.layer_dims)?),
        Detector::Baseline(_) => None,
    };
    let layers = tracker.as_ref().map(|t| t.layers().to_vec()).unwrap_or_default();
    let mut builder = ReportBuilder::new(detector.name(), config, layers, options.pooled_metrics);
    let mut kept = Vec::new();

    for batch in batches {
        let batch = batch?;
        let (scores, flips, cosines) = match (&mut tracker, detector) {
            (Some(t), _) => {
                let out = t.process(batch.detector_view())?;
                let cosines = options
                    .oracle_axes
                    .as_ref()
                    .map(|o| axis_alignment(t, o).into_iter().map(|a| a.cosine).collect())
                    .unwrap_or_default();
                let fused = out.fused.clone();
                let flips = out.flip_events.clone();
                if options.keep_scores {
                    kept.push(out);
                }
                (fused, flips, cosines)
            }
            (None, Detector::Baseline(kind)) => {
                let logits = batch.logits.as_ref().ok_or(RunError::MissingLogits(kind.name()))?;
                (baselines::score(*kind, logits)?, Vec::new(), Vec::new())
            }
            (None, Detector::Dart(_)) => unreachable!("tracker built for dart"),
        };
        builder.push(batch.index, &scores, batch.labels.as_deref(), flips, cosines)?;
    }
    Ok(RunOutput {
        report: builder.finish()?,
        scores: kept,
        tracker,
    })
}

//! Multi-layer score fusion and the optional hard decision surface.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{self, StatsError, DEFAULT_OTSU_BINS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("no layers selected for fusion")]
    NoLayers,
    #[error("layer {layer} out of range for a {num_layers}-layer stream")]
    LayerOutOfRange { layer: usize, num_layers: usize },
    #[error("layer {layer} has {got} scores, expected {expected}")]
    LengthMismatch { layer: usize, got: usize, expected: usize },
    #[error("empty score vector")]
    Empty,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PseudoLabel {
    Id,
    Ood,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DecisionRule {
    /// Emit scores only; evaluation is threshold-free.
    ScoreOnly,
    /// ID iff the fused score reaches this batch's Otsu threshold.
    OtsuPerBatch { bins: usize },
}

impl Default for DecisionRule {
    fn default() -> Self {
        DecisionRule::OtsuPerBatch {
            bins: DEFAULT_OTSU_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub layer_subset: Vec<usize>,
    pub decision_rule: DecisionRule,
}

impl FusionConfig {
    pub fn validate(&self, num_layers: usize) -> Result<(), FusionError> {
        if self.layer_subset.is_empty() {
            return Err(FusionError::NoLayers);
        }
        if let Some(&layer) = self.layer_subset.iter().find(|&&l| l >= num_layers) {
            return Err(FusionError::LayerOutOfRange { layer, num_layers });
        }
        Ok(())
    }
}

/// Row-wise arithmetic mean over layers. `per_layer[l][i]` is the score of
/// sample `i` at layer `l`.
pub fn fuse<S: AsRef<[f64]>>(per_layer: &[S]) -> Result<Vec<f64>, FusionError> {
    let first = per_layer.first().ok_or(FusionError::NoLayers)?.as_ref();
    let n = first.len();
    let mut out = vec![0.0f64; n];
    for (layer, scores) in per_layer.iter().enumerate() {
        let scores = scores.as_ref();
        if scores.len() != n {
            return Err(FusionError::LengthMismatch {
                layer,
                got: scores.len(),
                expected: n,
            });
        }
        for (o, s) in out.iter_mut().zip(scores) {
            *o += s;
        }
    }
    let k = per_layer.len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    Ok(out)
}

/// Hard labels for one batch of fused scores. `ScoreOnly` yields `None`.
/// Identical scores fall back to all-ID.
pub fn decide(fused: &[f64], rule: DecisionRule) -> Result<Option<Vec<PseudoLabel>>, FusionError> {
    if fused.is_empty() {
        return Err(FusionError::Empty);
    }
    let bins = match rule {
        DecisionRule::ScoreOnly => return Ok(None),
        DecisionRule::OtsuPerBatch { bins } => bins,
    };
    let labels = match stats::otsu_threshold(fused, bins) {
        Ok(r) => threshold_labels(fused, r.threshold),
        Err(StatsError::Degenerate(_)) => vec![PseudoLabel::Id; fused.len()],
        Err(e) => return Err(e.into()),
    };
    Ok(Some(labels))
}

/// ID iff `score >= threshold`.
pub fn threshold_labels(scores: &[f64], threshold: f64) -> Vec<PseudoLabel> {
    scores
        .iter()
        .map(|&s| if s >= threshold { PseudoLabel::Id } else { PseudoLabel::Ood })
        .collect()
}

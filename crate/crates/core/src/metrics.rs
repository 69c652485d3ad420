//! Threshold-free evaluation against in-band ground truth.
//!
//! ID is the positive class and higher scores mean "more ID". Metrics are
//! computed per batch and then averaged over batches; a pooled whole-stream
//! variant is available for diagnostics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream_io::GroundTruth;

/// Column order of [`RunReport::to_csv`]. Bump when the layout changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TPR_TARGET: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("need at least one ID and one OOD sample (got {n_id} ID, {n_ood} OOD)")]
    SingleClass { n_id: usize, n_ood: usize },
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("TPR target {0} outside (0, 1]")]
    BadTarget(f64),
    #[error("non-finite score")]
    NonFinite,
}

/// `(score, is_id)` pairs sorted by score ascending, with the ID and OOD counts.
type LabeledPairs = (Vec<(f64, bool)>, usize, usize);

/// Drops unknown labels and sorts by score.
fn labeled_pairs(scores: &[f64], labels: &[GroundTruth]) -> Result<LabeledPairs, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let mut pairs = Vec::with_capacity(scores.len());
    for (&s, &l) in scores.iter().zip(labels) {
        if !s.is_finite() {
            return Err(MetricsError::NonFinite);
        }
        match l {
            GroundTruth::Id => pairs.push((s, true)),
            GroundTruth::Ood => pairs.push((s, false)),
            GroundTruth::Unknown => {}
        }
    }
    let n_id = pairs.iter().filter(|p| p.1).count();
    let n_ood = pairs.len() - n_id;
    if n_id == 0 || n_ood == 0 {
        return Err(MetricsError::SingleClass { n_id, n_ood });
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok((pairs, n_id, n_ood))
}

/// Runs of equal scores as `(score, n_id, n_ood)`, ascending.
fn tie_groups(pairs: &[(f64, bool)]) -> Vec<(f64, usize, usize)> {
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for &(s, is_id) in pairs {
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if is_id {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, usize::from(is_id), usize::from(!is_id))),
        }
    }
    groups
}

/// `P(score_ID > score_OOD) + P(tie) / 2`, exact: the Mann-Whitney count is
/// accumulated in integers and divided once.
pub fn auroc(scores: &[f64], labels: &[GroundTruth]) -> Result<f64, MetricsError> {
    let (pairs, n_id, n_ood) = labeled_pairs(scores, labels)?;
    let mut ood_below = 0u64;
    let mut twice_u = 0u64;
    for (_, ids, oods) in tie_groups(&pairs) {
        twice_u += ids as u64 * (2 * ood_below + oods as u64);
        ood_below += oods as u64;
    }
    Ok(twice_u as f64 / (2 * n_id as u64 * n_ood as u64) as f64)
}

/// FPR at the largest threshold `tau` (over distinct scores) whose TPR reaches
/// `tpr_target`, predicting ID when `score >= tau`.
pub fn fpr_at_tpr(scores: &[f64], labels: &[GroundTruth], tpr_target: f64) -> Result<f64, MetricsError> {
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(MetricsError::BadTarget(tpr_target));
    }
    let (pairs, n_id, n_ood) = labeled_pairs(scores, labels)?;
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, ids, oods) in tie_groups(&pairs).into_iter().rev() {
        tp += ids;
        fp += oods;
        if tp as f64 / n_id as f64 >= tpr_target {
            return Ok(fp as f64 / n_ood as f64);
        }
    }
    unreachable!("the lowest threshold accepts every ID sample")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub batch_index: u32,
    pub auroc: f64,
    pub fpr_at_95tpr: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

/// Metrics for one batch, or `None` when it lacks one of the classes.
pub fn evaluate_batch(batch_index: u32, scores: &[f64], labels: &[GroundTruth]) -> Result<Option<BatchMetrics>, MetricsError> {
    let n_id = labels.iter().filter(|&&l| l == GroundTruth::Id).count();
    let n_ood = labels.iter().filter(|&&l| l == GroundTruth::Ood).count();
    match auroc(scores, labels) {
        Ok(a) => Ok(Some(BatchMetrics {
            batch_index,
            auroc: a,
            fpr_at_95tpr: fpr_at_tpr(scores, labels, DEFAULT_TPR_TARGET)?,
            n_id,
            n_ood,
        })),
        Err(MetricsError::SingleClass { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch: u32,
    pub n: usize,
    pub metrics: Option<BatchMetrics>,
    pub flips: Vec<usize>,
    pub mean_score_id: Option<f64>,
    pub mean_score_ood: Option<f64>,
    /// Per tracked layer, cosine between tracker axis and oracle axis.
    pub axis_cosines: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean_auroc: Option<f64>,
    pub mean_fpr_at_95tpr: Option<f64>,
    pub batches_evaluated: usize,
    pub pooled_auroc: Option<f64>,
    pub pooled_fpr_at_95tpr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRecord {
    pub batch: u32,
    pub layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub detector: String,
    pub config: serde_json::Value,
    pub layers: Vec<usize>,
    pub summary: Summary,
    pub flip_log: Vec<FlipRecord>,
    pub batches: Vec<BatchRecord>,
}

/// Mean of defined AUROC / FPR95 values, with the number of batches that had both classes.
pub fn average<'a, I>(records: I) -> (Option<f64>, Option<f64>, usize)
where
    I: IntoIterator<Item = &'a BatchRecord>,
{
    let (mut a, mut f, mut n) = (0.0, 0.0, 0usize);
    for m in records.into_iter().filter_map(|r| r.metrics.as_ref()) {
        a += m.auroc;
        f += m.fpr_at_95tpr;
        n += 1;
    }
    if n == 0 {
        (None, None, 0)
    } else {
        (Some(a / n as f64), Some(f / n as f64), n)
    }
}

fn mean_where(scores: &[f64], labels: &[GroundTruth], want: GroundTruth) -> Option<f64> {
    let (s, n) = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == want)
        .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Accumulates per-batch records into a [`RunReport`].
#[derive(Debug, Clone)]
pub struct ReportBuilder {
    detector: String,
    config: serde_json::Value,
    layers: Vec<usize>,
    pooled: bool,
    pooled_scores: Vec<f64>,
    pooled_labels: Vec<GroundTruth>,
    records: Vec<BatchRecord>,
}

impl ReportBuilder {
    pub fn new(detector: &str, config: serde_json::Value, layers: Vec<usize>, pooled: bool) -> Self {
        Self {
            detector: detector.to_string(),
            config,
            layers,
            pooled,
            pooled_scores: Vec::new(),
            pooled_labels: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        batch: u32,
        scores: &[f64],
        labels: Option<&[GroundTruth]>,
        flips: Vec<usize>,
        axis_cosines: Vec<f64>,
    ) -> Result<&BatchRecord, MetricsError> {
        let (metrics, mean_id, mean_ood) = match labels {
            Some(labels) => {
                if self.pooled {
                    self.pooled_scores.extend_from_slice(scores);
                    self.pooled_labels.extend_from_slice(labels);
                }
                (
                    evaluate_batch(batch, scores, labels)?,
                    mean_where(scores, labels, GroundTruth::Id),
                    mean_where(scores, labels, GroundTruth::Ood),
                )
            }
            None => (None, None, None),
        };
        self.records.push(BatchRecord {
            batch,
            n: scores.len(),
            metrics,
            flips,
            mean_score_id: mean_id,
            mean_score_ood: mean_ood,
            axis_cosines,
        });
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn records(&self) -> &[BatchRecord] {
        &self.records
    }

    pub fn finish(self) -> Result<RunReport, MetricsError> {
        let (mean_auroc, mean_fpr, n) = average(&self.records);
        let (pooled_auroc, pooled_fpr) = if self.pooled && !self.pooled_scores.is_empty() {
            match auroc(&self.pooled_scores, &self.pooled_labels) {
                Ok(a) => (
                    Some(a),
                    Some(fpr_at_tpr(&self.pooled_scores, &self.pooled_labels, DEFAULT_TPR_TARGET)?),
                ),
                Err(MetricsError::SingleClass { .. }) => (None, None),
                Err(e) => return Err(e),
            }
        } else {
            (None, None)
        };
        let flip_log = self
            .records
            .iter()
            .flat_map(|r| r.flips.iter().map(move |&layer| FlipRecord { batch: r.batch, layer }))
            .collect();
        Ok(RunReport {
            detector: self.detector,
            config: self.config,
            layers: self.layers,
            summary: Summary {
                mean_auroc,
                mean_fpr_at_95tpr: mean_fpr,
                batches_evaluated: n,
                pooled_auroc,
                pooled_fpr_at_95tpr: pooled_fpr,
            },
            flip_log,
            batches: self.records,
        })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per batch:
    /// `batch,n,n_id,n_ood,auroc,fpr95,flips,mean_score_id,mean_score_ood,cos_l<k>...`
    /// with one `cos_l<k>` column per tracked layer `k` (absent for baselines).
    /// `flips` is a `;`-separated list of layer indices; undefined values are empty.
    pub fn to_csv(&self) -> String {
        let with_cos = self.batches.iter().any(|r| !r.axis_cosines.is_empty());
        let mut out = String::from("batch,n,n_id,n_ood,auroc,fpr95,flips,mean_score_id,mean_score_ood");
        if with_cos {
            for l in &self.layers {
                write!(out, ",cos_l{l}").unwrap();
            }
        }
        out.push('\n');
        for r in &self.batches {
            let flips: Vec<String> = r.flips.iter().map(usize::to_string).collect();
            write!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.batch,
                r.n,
                r.metrics.map(|m| m.n_id.to_string()).unwrap_or_default(),
                r.metrics.map(|m| m.n_ood.to_string()).unwrap_or_default(),
                opt(r.metrics.map(|m| m.auroc)),
                opt(r.metrics.map(|m| m.fpr_at_95tpr)),
                flips.join(";"),
                opt(r.mean_score_id),
                opt(r.mean_score_ood),
            )
            .unwrap();
            if with_cos {
                for k in 0..self.layers.len() {
                    out.push(',');
                    out.push_str(&opt(r.axis_cosines.get(k).copied()));
                }
            }
            out.push('\n');
        }
        out
    }
}

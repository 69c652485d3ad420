//! Dual-prototype discriminative-axis tracker.
//!
//! Each tracked layer keeps an ID prototype and an OOD prototype. The first
//! batch (or the first `init_batches` batches) bootstraps them from MSP
//! pseudo-labels. Every later batch is scored by the relative distance score
//! (RDS) against the previous prototypes, split by Otsu, filtered with an
//! upper Tukey fence, and folded back in with an exponential moving average.
//! Every `flip_period`-th batch the prototypes are checked against fresh
//! MSP-based references and swapped if they have drifted to the wrong sides.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{self, BaselineError};
use crate::fusion::{self, DecisionRule, FusionError, PseudoLabel};
use crate::stats::{self, StatsError, DEFAULT_IQR_FACTOR, DEFAULT_OTSU_BINS};
use crate::stream_io::{BatchView, Matrix};
use crate::vector;

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("invalid tracker config: {0}")]
    InvalidConfig(String),
    #[error("batch has no logits; MSP initialization needs them")]
    MissingLogits,
    #[error("tracker is not initialized")]
    NotInitialized,
    #[error("tracker is already initialized")]
    AlreadyInitialized,
    #[error("batch has {got} layers, tracker expects {expected}")]
    LayerCount { expected: usize, got: usize },
    #[error("layer {layer}: feature dim {got}, prototype dim {expected}")]
    DimensionMismatch { layer: usize, expected: usize, got: usize },
    #[error("unsupported snapshot version {0}")]
    SnapshotVersion(u32),
    #[error("snapshot: {0}")]
    Snapshot(#[from] serde_json::Error),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

pub type Result<T> = std::result::Result<T, TrackerError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// EMA weight on the previous prototype.
    pub alpha: f64,
    /// Flip check runs on every batch whose 1-based index is a multiple of this.
    pub flip_period: u32,
    pub flip_correction: bool,
    /// Distance ratio in the flip test; strictly greater than 1.
    pub flip_factor: f64,
    pub iqr_factor: f64,
    pub otsu_bins: usize,
    /// Layers to track; `None` tracks every layer.
    pub layers: Option<Vec<usize>>,
    /// Number of non-degenerate batches pooled for the MSP bootstrap.
    pub init_batches: u32,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            flip_period: 5,
            flip_correction: true,
            flip_factor: 2.0,
            iqr_factor: DEFAULT_IQR_FACTOR,
            otsu_bins: DEFAULT_OTSU_BINS,
            layers: None,
            init_batches: 1,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrackerError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.flip_period == 0 {
            return bad("flip_period must be >= 1".into());
        }
        if self.flip_factor.is_nan() || self.flip_factor <= 1.0 {
            return bad(format!("flip_factor {} must exceed 1", self.flip_factor));
        }
        if self.iqr_factor.is_nan() || self.iqr_factor <= 0.0 {
            return bad(format!("iqr_factor {} must be positive", self.iqr_factor));
        }
        if self.otsu_bins < 2 {
            return bad(format!("otsu_bins {} must be >= 2", self.otsu_bins));
        }
        if self.init_batches == 0 {
            return bad("init_batches must be >= 1".into());
        }
        if let Some(l) = &self.layers {
            if l.is_empty() {
                return bad("layer subset is empty".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPrototype {
    pub id: Vec<f64>,
    pub ood: Vec<f64>,
}

impl DualPrototype {
    pub fn new(id: Vec<f64>, ood: Vec<f64>) -> Self {
        assert_eq!(id.len(), ood.len(), "prototype dims differ");
        Self { id, ood }
    }

    pub fn dim(&self) -> usize {
        self.id.len()
    }

    /// `id - ood`, pointing from the OOD prototype to the ID prototype.
    pub fn axis(&self) -> Vec<f64> {
        vector::sub(&self.id, &self.ood)
    }

    pub fn swap(&mut self) {
        std::mem::swap(&mut self.id, &mut self.ood);
    }
}

/// Relative distance score of every row of `features` against `proto`.
///
/// `1 - d_id / (d_id + d_ood)`; a row sitting on both prototypes scores 0.5.
pub fn compute_rds(features: &Matrix, proto: &DualPrototype) -> Result<Vec<f64>> {
    if features.cols() != proto.dim() {
        return Err(TrackerError::DimensionMismatch {
            layer: 0,
            expected: proto.dim(),
            got: features.cols(),
        });
    }
    Ok(features
        .iter_rows()
        .map(|z| relative_distance(vector::distance(z, &proto.id), vector::distance(z, &proto.ood)))
        .collect())
}

/// RDS of a single `f64` point.
pub fn rds_of_point(z: &[f64], proto: &DualPrototype) -> f64 {
    relative_distance(vector::l2_distance(z, &proto.id), vector::l2_distance(z, &proto.ood))
}

fn relative_distance(d_id: f64, d_ood: f64) -> f64 {
    let total = d_id + d_ood;
    if total == 0.0 {
        0.5
    } else {
        1.0 - d_id / total
    }
}

pub use baselines::msp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Initialization,
    Tracking,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrackerEvent {
    /// All MSP values equal; the batch was pseudo-labeled all-ID.
    DegenerateMsp,
    /// The OOD prototype still mirrors the ID prototype; initialization continues.
    OodUninitialized,
    /// All RDS values equal at this layer; its update was skipped.
    DegenerateRds { layer: usize },
    EmptyGroup { layer: usize, group: PseudoLabel },
    AllFiltered { layer: usize, group: PseudoLabel },
    FlipSkippedNoLogits,
    FlipSkippedDegenerateMsp,
    Flipped { layer: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchScores {
    /// 1-based batch counter after this batch.
    pub batch: u64,
    pub stage: Stage,
    /// Stream layer indices, in the order of `rds`.
    pub layers: Vec<usize>,
    /// `rds[j][i]`: score of sample `i` at tracked layer `j`. Empty during initialization.
    pub rds: Vec<Vec<f64>>,
    /// Per-layer Otsu thresholds used for the update (`None` if degenerate).
    pub layer_thresholds: Vec<Option<f64>>,
    pub layer_pseudo_labels: Vec<Vec<PseudoLabel>>,
    /// RDS averaged over layers; MSP during initialization.
    pub fused: Vec<f64>,
    /// Batch-level labels: MSP/Otsu split during initialization, Otsu over `fused` afterwards.
    pub pseudo_labels: Vec<PseudoLabel>,
    pub msp: Option<Vec<f64>>,
    pub flip_events: Vec<usize>,
    pub events: Vec<TrackerEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct InitAccumulator {
    batches: u32,
    id_count: usize,
    ood_count: usize,
    id_sum: Vec<Vec<f64>>,
    ood_sum: Vec<Vec<f64>>,
}

impl InitAccumulator {
    fn new(dims: &[usize]) -> Self {
        Self {
            batches: 0,
            id_count: 0,
            ood_count: 0,
            id_sum: dims.iter().map(|&d| vec![0.0; d]).collect(),
            ood_sum: dims.iter().map(|&d| vec![0.0; d]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracker {
    config: TrackerConfig,
    /// Dimensions of every stream layer, tracked or not.
    stream_dims: Vec<u32>,
    layers: Vec<usize>,
    prototypes: Vec<DualPrototype>,
    batches_seen: u64,
    initialized: bool,
    ood_uninitialized: bool,
    init: InitAccumulator,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    version: u32,
    tracker: Tracker,
}

impl Tracker {
    pub fn new(config: TrackerConfig, stream_dims: &[u32]) -> Result<Self> {
        config.validate()?;
        if stream_dims.is_empty() || stream_dims.contains(&0) {
            return Err(TrackerError::InvalidConfig(
                "stream needs at least one layer of positive dim".into(),
            ));
        }
        let layers: Vec<usize> = match &config.layers {
            Some(l) => l.clone(),
            None => (0..stream_dims.len()).collect(),
        };
        if let Some(&bad) = layers.iter().find(|&&l| l >= stream_dims.len()) {
            return Err(TrackerError::InvalidConfig(format!(
                "layer {bad} out of range for {} stream layers",
                stream_dims.len()
            )));
        }
        let dims: Vec<usize> = layers.iter().map(|&l| stream_dims[l] as usize).collect();
        Ok(Self {
            prototypes: dims
                .iter()
                .map(|&d| DualPrototype::new(vec![0.0; d], vec![0.0; d]))
                .collect(),
            init: InitAccumulator::new(&dims),
            config,
            stream_dims: stream_dims.to_vec(),
            layers,
            batches_seen: 0,
            initialized: false,
            ood_uninitialized: false,
        })
    }

    /// An already-initialized tracker with the given prototypes, one per tracked layer.
    pub fn with_prototypes(
        config: TrackerConfig,
        stream_dims: &[u32],
        prototypes: Vec<DualPrototype>,
    ) -> Result<Self> {
        let mut t = Self::new(config, stream_dims)?;
        if prototypes.len() != t.layers.len() {
            return Err(TrackerError::InvalidConfig(format!(
                "{} prototypes for {} tracked layers",
                prototypes.len(),
                t.layers.len()
            )));
        }
        for (j, p) in prototypes.iter().enumerate() {
            let expected = t.stream_dims[t.layers[j]] as usize;
            if p.dim() != expected {
                return Err(TrackerError::DimensionMismatch {
                    layer: t.layers[j],
                    expected,
                    got: p.dim(),
                });
            }
        }
        t.prototypes = prototypes;
        t.initialized = true;
        t.batches_seen = 1;
        Ok(t)
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn prototypes(&self) -> &[DualPrototype] {
        &self.prototypes
    }

    pub fn batches_seen(&self) -> u64 {
        self.batches_seen
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Per tracked layer, `id - ood`.
    pub fn axes(&self) -> Vec<Vec<f64>> {
        self.prototypes.iter().map(DualPrototype::axis).collect()
    }

    /// Routes the batch to initialization or tracking.
    pub fn process(&mut self, batch: BatchView<'_>) -> Result<BatchScores> {
        if self.initialized {
            self.update_batch(batch)
        } else {
            self.initialize(batch)
        }
    }

    fn check_shape(&self, batch: &BatchView<'_>) -> Result<()> {
        if batch.layers.len() != self.stream_dims.len() {
            return Err(TrackerError::LayerCount {
                expected: self.stream_dims.len(),
                got: batch.layers.len(),
            });
        }
        for &l in &self.layers {
            let got = batch.layers[l].cols();
            let expected = self.stream_dims[l] as usize;
            if got != expected {
                return Err(TrackerError::DimensionMismatch { layer: l, expected, got });
            }
        }
        Ok(())
    }

    /// One bootstrap step: split by Otsu over MSP (high MSP is ID) and pool the
    /// per-group feature sums. Emits MSP as the score.
    pub fn initialize(&mut self, batch: BatchView<'_>) -> Result<BatchScores> {
        if self.initialized {
            return Err(TrackerError::AlreadyInitialized);
        }
        self.check_shape(&batch)?;
        let logits = batch.logits.ok_or(TrackerError::MissingLogits)?;
        let msp = baselines::msp(logits)?;
        let mut events = Vec::new();

        let labels = match stats::otsu_threshold(&msp, self.config.otsu_bins) {
            Ok(r) => {
                let labels = fusion::threshold_labels(&msp, r.threshold);
                for (j, &l) in self.layers.iter().enumerate() {
                    let feats = &batch.layers[l];
                    for (i, row) in feats.iter_rows().enumerate() {
                        let sum = match labels[i] {
                            PseudoLabel::Id => &mut self.init.id_sum[j],
                            PseudoLabel::Ood => &mut self.init.ood_sum[j],
                        };
                        for (a, &v) in sum.iter_mut().zip(row) {
                            *a += f64::from(v);
                        }
                    }
                }
                self.init.id_count += labels.iter().filter(|&&l| l == PseudoLabel::Id).count();
                self.init.ood_count += labels.iter().filter(|&&l| l == PseudoLabel::Ood).count();
                self.init.batches += 1;
                labels
            }
            Err(StatsError::Degenerate(_)) => {
                events.push(TrackerEvent::DegenerateMsp);
                vec![PseudoLabel::Id; msp.len()]
            }
            Err(e) => return Err(e.into()),
        };
        self.batches_seen += 1;

        if self.init.id_count > 0 && self.init.ood_count > 0 {
            let (nid, nood) = (self.init.id_count as f64, self.init.ood_count as f64);
            for (j, p) in self.prototypes.iter_mut().enumerate() {
                p.id = self.init.id_sum[j].iter().map(|s| s / nid).collect();
                p.ood = self.init.ood_sum[j].iter().map(|s| s / nood).collect();
            }
            self.ood_uninitialized = false;
            if self.init.batches >= self.config.init_batches {
                self.initialized = true;
            }
        } else if self.init.id_count == 0 {
            // Nothing pooled yet: park both prototypes on this batch's mean.
            for (j, &l) in self.layers.iter().enumerate() {
                let feats = &batch.layers[l];
                let mean = vector::mean_of_rows(feats, 0..feats.rows()).expect("batch is non-empty");
                self.prototypes[j] = DualPrototype::new(mean.clone(), mean);
            }
            self.ood_uninitialized = true;
            events.push(TrackerEvent::OodUninitialized);
        } else {
            self.ood_uninitialized = true;
            events.push(TrackerEvent::OodUninitialized);
        }

        Ok(BatchScores {
            batch: self.batches_seen,
            stage: Stage::Initialization,
            layers: self.layers.clone(),
            rds: Vec::new(),
            layer_thresholds: vec![None; self.layers.len()],
            layer_pseudo_labels: vec![labels.clone(); self.layers.len()],
            fused: msp.clone(),
            pseudo_labels: labels,
            msp: Some(msp),
            flip_events: Vec::new(),
            events,
        })
    }

    /// Compares each tracked layer's prototypes with an MSP-based ID reference
    /// from `batch` and swaps the pair when
    /// `|p_id - ref| > factor * |p_ood - ref|` and `cos(p_id, ref) < cos(p_ood, ref)`.
    /// Returns the stream indices of swapped layers.
    pub fn check_flip(&mut self, batch: BatchView<'_>) -> Result<Vec<usize>> {
        self.check_flip_inner(batch).map(|(flips, _)| flips)
    }

    fn check_flip_inner(&mut self, batch: BatchView<'_>) -> Result<(Vec<usize>, Vec<TrackerEvent>)> {
        if !self.initialized {
            return Err(TrackerError::NotInitialized);
        }
        self.check_shape(&batch)?;
        let Some(logits) = batch.logits else {
            warn!("batch {}: no logits, flip check skipped", self.batches_seen + 1);
            return Ok((Vec::new(), vec![TrackerEvent::FlipSkippedNoLogits]));
        };
        let msp = baselines::msp(logits)?;
        let tau = match stats::otsu_threshold(&msp, self.config.otsu_bins) {
            Ok(r) => r.threshold,
            Err(StatsError::Degenerate(_)) => {
                return Ok((Vec::new(), vec![TrackerEvent::FlipSkippedDegenerateMsp]));
            }
            Err(e) => return Err(e.into()),
        };
        let id_rows: Vec<usize> = (0..msp.len()).filter(|&i| msp[i] >= tau).collect();
        let mut flipped = Vec::new();
        let mut events = Vec::new();
        for (j, &l) in self.layers.iter().enumerate() {
            let reference = vector::mean_of_rows(&batch.layers[l], id_rows.iter().copied())
                .expect("a non-degenerate Otsu split has a non-empty upper side");
            let p = &mut self.prototypes[j];
            let far = vector::l2_distance(&p.id, &reference)
                > self.config.flip_factor * vector::l2_distance(&p.ood, &reference);
            let misaligned = vector::cosine(&p.id, &reference) < vector::cosine(&p.ood, &reference);
            if far && misaligned {
                p.swap();
                flipped.push(l);
                events.push(TrackerEvent::Flipped { layer: l });
            }
        }
        Ok((flipped, events))
    }

    /// One tracking step: optional flip check, RDS against the previous
    /// prototypes, Otsu split, Tukey filtering, EMA update.
    pub fn update_batch(&mut self, batch: BatchView<'_>) -> Result<BatchScores> {
        if !self.initialized {
            return Err(TrackerError::NotInitialized);
        }
        self.check_shape(&batch)?;
        let t = self.batches_seen + 1;
        let mut events = Vec::new();
        let mut flip_events = Vec::new();
        if self.config.flip_correction && t.is_multiple_of(u64::from(self.config.flip_period)) {
            let (flips, ev) = self.check_flip_inner(batch)?;
            flip_events = flips;
            events.extend(ev);
        }

        let alpha = self.config.alpha;
        let mut rds_all = Vec::with_capacity(self.layers.len());
        let mut thresholds = Vec::with_capacity(self.layers.len());
        let mut layer_labels = Vec::with_capacity(self.layers.len());
        for (j, &l) in self.layers.iter().enumerate() {
            let feats = &batch.layers[l];
            let proto = &self.prototypes[j];
            let rds = compute_rds(feats, proto).map_err(|e| match e {
                TrackerError::DimensionMismatch { expected, got, .. } => {
                    TrackerError::DimensionMismatch { layer: l, expected, got }
                }
                other => other,
            })?;

            let tau = match stats::otsu_threshold(&rds, self.config.otsu_bins) {
                Ok(r) => Some(r.threshold),
                Err(StatsError::Degenerate(_)) => None,
                Err(e) => return Err(e.into()),
            };
            let Some(tau) = tau else {
                events.push(TrackerEvent::DegenerateRds { layer: l });
                layer_labels.push(vec![PseudoLabel::Id; rds.len()]);
                thresholds.push(None);
                rds_all.push(rds);
                continue;
            };
            let labels = fusion::threshold_labels(&rds, tau);

            let mut updated = proto.clone();
            for group in [PseudoLabel::Id, PseudoLabel::Ood] {
                let prev = match group {
                    PseudoLabel::Id => &proto.id,
                    PseudoLabel::Ood => &proto.ood,
                };
                let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == group).collect();
                if members.is_empty() {
                    events.push(TrackerEvent::EmptyGroup { layer: l, group });
                    continue;
                }
                let dists: Vec<f64> = members
                    .iter()
                    .map(|&i| vector::distance(feats.row(i), prev))
                    .collect();
                let keep = stats::tukey_keep_mask(&dists, self.config.iqr_factor)?;
                let survivors = members.iter().zip(&keep).filter(|(_, &k)| k).map(|(&i, _)| i);
                let Some(center) = vector::mean_of_rows(feats, survivors) else {
                    events.push(TrackerEvent::AllFiltered { layer: l, group });
                    continue;
                };
                let blended: Vec<f64> = prev
                    .iter()
                    .zip(&center)
                    .map(|(&p, &c)| alpha * p + (1.0 - alpha) * c)
                    .collect();
                match group {
                    PseudoLabel::Id => updated.id = blended,
                    PseudoLabel::Ood => updated.ood = blended,
                }
            }
            self.prototypes[j] = updated;
            thresholds.push(Some(tau));
            layer_labels.push(labels);
            rds_all.push(rds);
        }

        let fused = fusion::fuse(&rds_all)?;
        let pseudo_labels = fusion::decide(
            &fused,
            DecisionRule::OtsuPerBatch {
                bins: self.config.otsu_bins,
            },
        )?
        .expect("otsu rule yields labels");
        let msp = batch.logits.map(baselines::msp).transpose()?;
        self.batches_seen = t;

        Ok(BatchScores {
            batch: t,
            stage: Stage::Tracking,
            layers: self.layers.clone(),
            rds: rds_all,
            layer_thresholds: thresholds,
            layer_pseudo_labels: layer_labels,
            fused,
            pseudo_labels,
            msp,
            flip_events,
            events,
        })
    }

    /// Versioned JSON snapshot; restoring it reproduces the state bit for bit.
    pub fn snapshot(&self) -> String {
        serde_json::to_string(&Snapshot {
            version: SNAPSHOT_VERSION,
            tracker: self.clone(),
        })
        .expect("tracker state serializes")
    }

    pub fn restore(json: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            version: u32,
        }
        let v: Version = serde_json::from_str(json)?;
        if v.version != SNAPSHOT_VERSION {
            return Err(TrackerError::SnapshotVersion(v.version));
        }
        let snap: Snapshot = serde_json::from_str(json)?;
        snap.tracker.config.validate()?;
        Ok(snap.tracker)
    }
}

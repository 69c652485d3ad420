//! Scenario-driven generator of labeled DFS1 streams, plus oracle-axis
//! diagnostics computed from the in-band labels.
//!
//! Each layer has an isotropic Gaussian cluster per class. Covariate shift is
//! an additive offset applied to both classes, so it moves ID and OOD
//! together and leaves the true axis `id_mean - ood_mean` unchanged. Logits
//! are synthetic: the sample's "true" class logit exceeds the others by a
//! class-dependent margin plus Gaussian noise.
//!
//! Scenario files are TOML. Vectors are given either densely (`[1.0, 2.0]`) or
//! sparsely (`{ fill = 0.5, set = [[0, 2.5], [3, -1.0]] }`). See the bundled
//! scenarios under `scenarios/` for complete examples.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream_io::{FeatureBatch, GroundTruth, ManifestMarker, Matrix, StreamError, StreamHeader, StreamManifest, StreamWriter};
use crate::tracker::Tracker;
use crate::vector;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("oracle axis for layer {layer} needs both classes (got {n_id} ID, {n_ood} OOD)")]
    SingleClass { layer: usize, n_id: usize, n_ood: usize },
    #[error("batch has no labels")]
    Unlabeled,
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Dense(Vec<f64>),
    Sparse {
        fill: f64,
        #[serde(default)]
        set: Vec<(usize, f64)>,
    },
}

impl VectorSpec {
    pub fn resolve(&self, dim: usize, field: &str) -> Result<Vec<f64>, ScenarioError> {
        let v = match self {
            VectorSpec::Dense(v) => {
                if v.len() != dim {
                    return Err(invalid(field, format!("has length {}, layer dim is {dim}", v.len())));
                }
                v.clone()
            }
            VectorSpec::Sparse { fill, set } => {
                let mut v = vec![*fill; dim];
                for &(i, x) in set {
                    if i >= dim {
                        return Err(invalid(field, format!("index {i} out of range for dim {dim}")));
                    }
                    v[i] = x;
                }
                v
            }
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(invalid(field, "non-finite entry"));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub dim: u32,
    pub id_mean: VectorSpec,
    pub ood_mean: VectorSpec,
    pub id_std: f64,
    pub ood_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogitModel {
    pub num_classes: u32,
    pub id_margin: f64,
    pub ood_margin: f64,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftChange {
    pub start_batch: u32,
    /// One offset per layer, added to both classes from `start_batch` on.
    pub offsets: Vec<VectorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodSourceChange {
    pub start_batch: u32,
    /// Replacement OOD mean per layer.
    pub ood_means: Vec<VectorSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioChange {
    pub start_batch: u32,
    pub id_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogitChange {
    pub start_batch: u32,
    pub num_classes: u32,
    pub id_margin: f64,
    pub ood_margin: f64,
    pub noise_std: f64,
}

impl LogitChange {
    fn model(&self) -> LogitModel {
        LogitModel {
            num_classes: self.num_classes,
            id_margin: self.id_margin,
            ood_margin: self.ood_margin,
            noise_std: self.noise_std,
        }
    }
}

fn default_batches() -> u32 {
    100
}
fn default_batch_size() -> u32 {
    200
}
fn default_ratio() -> f64 {
    0.5
}

/// Declarative stream description. Every schedule entry holds from its
/// `start_batch` (0-based) until the next entry of the same schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    #[serde(default = "default_batches")]
    pub num_batches: u32,
    #[serde(default = "default_batch_size")]
    pub batch_size: u32,
    #[serde(default = "default_ratio")]
    pub id_ratio: f64,
    #[serde(default)]
    pub id_ratio_schedule: Vec<RatioChange>,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub shift_schedule: Vec<ShiftChange>,
    #[serde(default)]
    pub ood_source_schedule: Vec<OodSourceChange>,
    pub logits: LogitModel,
    #[serde(default)]
    pub logit_schedule: Vec<LogitChange>,
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn layer_dims(&self) -> Vec<u32> {
        self.layers.iter().map(|l| l.dim).collect()
    }

    pub fn header(&self) -> StreamHeader {
        StreamHeader {
            layer_dims: self.layer_dims(),
            num_classes: self.logits.num_classes,
            has_labels: true,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.resolve().map(|_| ())
    }

    fn resolve(&self) -> Result<Resolved, ScenarioError> {
        if self.num_batches == 0 {
            return Err(invalid("num_batches", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be >= 1"));
        }
        check_ratio("id_ratio", self.id_ratio)?;
        if self.layers.is_empty() {
            return Err(invalid("layers", "at least one layer required"));
        }
        let mut id_means = Vec::new();
        let mut ood_means = Vec::new();
        let mut stds = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let dim = layer.dim as usize;
            if dim == 0 {
                return Err(invalid(format!("layers[{l}].dim"), "must be >= 1"));
            }
            id_means.push(layer.id_mean.resolve(dim, &format!("layers[{l}].id_mean"))?);
            ood_means.push(layer.ood_mean.resolve(dim, &format!("layers[{l}].ood_mean"))?);
            for (name, s) in [("id_std", layer.id_std), ("ood_std", layer.ood_std)] {
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(invalid(format!("layers[{l}].{name}"), "must be finite and >= 0"));
                }
            }
            stds.push((layer.id_std, layer.ood_std));
        }
        check_logits("logits", &self.logits)?;

        check_sorted("id_ratio_schedule", self.id_ratio_schedule.iter().map(|c| c.start_batch))?;
        for (i, c) in self.id_ratio_schedule.iter().enumerate() {
            check_ratio(&format!("id_ratio_schedule[{i}].id_ratio"), c.id_ratio)?;
        }
        check_sorted("logit_schedule", self.logit_schedule.iter().map(|c| c.start_batch))?;
        for (i, c) in self.logit_schedule.iter().enumerate() {
            let field = format!("logit_schedule[{i}]");
            check_logits(&field, &c.model())?;
            if c.num_classes != self.logits.num_classes {
                return Err(invalid(format!("{field}.num_classes"), "must match logits.num_classes"));
            }
        }

        check_sorted("shift_schedule", self.shift_schedule.iter().map(|c| c.start_batch))?;
        let shifts = self
            .shift_schedule
            .iter()
            .enumerate()
            .map(|(i, c)| {
                Ok((c.start_batch, self.per_layer(&c.offsets, &format!("shift_schedule[{i}].offsets"))?))
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        check_sorted("ood_source_schedule", self.ood_source_schedule.iter().map(|c| c.start_batch))?;
        let sources = self
            .ood_source_schedule
            .iter()
            .enumerate()
            .map(|(i, c)| {
                Ok((c.start_batch, self.per_layer(&c.ood_means, &format!("ood_source_schedule[{i}].ood_means"))?))
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;

        Ok(Resolved {
            id_means,
            ood_means,
            stds,
            shifts,
            sources,
        })
    }

    fn per_layer(&self, specs: &[VectorSpec], field: &str) -> Result<Vec<Vec<f64>>, ScenarioError> {
        if specs.len() != self.layers.len() {
            return Err(invalid(field, format!("{} entries for {} layers", specs.len(), self.layers.len())));
        }
        specs
            .iter()
            .zip(&self.layers)
            .enumerate()
            .map(|(l, (s, layer))| s.resolve(layer.dim as usize, &format!("{field}[{l}]")))
            .collect()
    }

    pub fn id_ratio_at(&self, batch: u32) -> f64 {
        active(&self.id_ratio_schedule, batch, |c| c.start_batch)
            .map_or(self.id_ratio, |c| c.id_ratio)
    }

    pub fn logits_at(&self, batch: u32) -> LogitModel {
        active(&self.logit_schedule, batch, |c| c.start_batch).map_or(self.logits, LogitChange::model)
    }

    /// `ceil(N * ratio)`, guarded against `0.7 * 200 = 140.00000000000003`.
    pub fn id_count_at(&self, batch: u32) -> usize {
        let n = self.batch_size as f64 * self.id_ratio_at(batch);
        ((n - 1e-9).ceil() as usize).min(self.batch_size as usize)
    }

    /// Closed-form `id_mean - ood_mean` at `layer` during `batch`.
    pub fn true_axis(&self, layer: usize, batch: u32) -> Result<Vec<f64>, ScenarioError> {
        let r = self.resolve()?;
        let ood = active(&r.sources, batch, |s| s.0).map_or(&r.ood_means[layer], |s| &s.1[layer]);
        Ok(vector::sub(&r.id_means[layer], ood))
    }

    /// Schedule events for the manifest.
    pub fn markers(&self) -> Vec<ManifestMarker> {
        let mut m: Vec<ManifestMarker> = Vec::new();
        let mut push = |batch: u32, kind: &str| m.push(ManifestMarker { batch, kind: kind.into() });
        self.shift_schedule.iter().for_each(|c| push(c.start_batch, "shift"));
        self.ood_source_schedule.iter().for_each(|c| push(c.start_batch, "ood_source"));
        self.id_ratio_schedule.iter().for_each(|c| push(c.start_batch, "id_ratio"));
        self.logit_schedule.iter().for_each(|c| push(c.start_batch, "logits"));
        m.sort_by(|a, b| a.batch.cmp(&b.batch).then_with(|| a.kind.cmp(&b.kind)));
        m
    }
}

fn check_ratio(field: &str, r: f64) -> Result<(), ScenarioError> {
    if !(r > 0.0 && r < 1.0) {
        return Err(invalid(field, format!("{r} outside (0, 1)")));
    }
    Ok(())
}

fn check_logits(field: &str, m: &LogitModel) -> Result<(), ScenarioError> {
    if m.num_classes < 2 {
        return Err(invalid(format!("{field}.num_classes"), "must be >= 2"));
    }
    for (name, v) in [("id_margin", m.id_margin), ("ood_margin", m.ood_margin), ("noise_std", m.noise_std)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(invalid(format!("{field}.{name}"), "must be finite and >= 0"));
        }
    }
    Ok(())
}

fn check_sorted(field: &str, starts: impl Iterator<Item = u32>) -> Result<(), ScenarioError> {
    let starts: Vec<u32> = starts.collect();
    if starts.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid(field, "entries must be sorted by start_batch"));
    }
    Ok(())
}

fn active<T>(schedule: &[T], batch: u32, start: impl Fn(&T) -> u32) -> Option<&T> {
    schedule.iter().rev().find(|c| start(c) <= batch)
}

#[derive(Debug, Clone)]
struct Resolved {
    id_means: Vec<Vec<f64>>,
    ood_means: Vec<Vec<f64>>,
    stds: Vec<(f64, f64)>,
    shifts: Vec<(u32, Vec<Vec<f64>>)>,
    sources: Vec<(u32, Vec<Vec<f64>>)>,
}

/// Lazily yields the batches of a scenario. Deterministic in the seed.
pub struct ScenarioGenerator {
    spec: ScenarioSpec,
    resolved: Resolved,
    rng: ChaCha8Rng,
    next: u32,
}

impl ScenarioGenerator {
    pub fn new(spec: ScenarioSpec) -> Result<Self, ScenarioError> {
        let resolved = spec.resolve()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            spec,
            resolved,
            next: 0,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    fn draw(&mut self, t: u32) -> FeatureBatch {
        let n = self.spec.batch_size as usize;
        let n_id = self.spec.id_count_at(t);
        let mut labels: Vec<GroundTruth> = (0..n)
            .map(|i| if i < n_id { GroundTruth::Id } else { GroundTruth::Ood })
            .collect();
        labels.shuffle(&mut self.rng);

        let r = &self.resolved;
        let shift = active(&r.shifts, t, |s| s.0).map(|s| &s.1);
        let ood_means = active(&r.sources, t, |s| s.0).map_or(&r.ood_means, |s| &s.1);

        let mut layers: Vec<Matrix> = self
            .spec
            .layers
            .iter()
            .map(|l| Matrix::zeros(n, l.dim as usize))
            .collect();
        for (i, &label) in labels.iter().enumerate() {
            for (l, m) in layers.iter_mut().enumerate() {
                let (mean, std) = match label {
                    GroundTruth::Ood => (&ood_means[l], r.stds[l].1),
                    _ => (&r.id_means[l], r.stds[l].0),
                };
                let offset = shift.map(|s| &s[l]);
                for (k, out) in m.row_mut(i).iter_mut().enumerate() {
                    let noise: f64 = self.rng.sample(StandardNormal);
                    let center = mean[k] + offset.map_or(0.0, |o| o[k]);
                    *out = (center + std * noise) as f32;
                }
            }
        }

        let model = self.spec.logits_at(t);
        let c = model.num_classes as usize;
        let mut logits = Matrix::zeros(n, c);
        for (i, &label) in labels.iter().enumerate() {
            let class = self.rng.random_range(0..c);
            let margin = match label {
                GroundTruth::Ood => model.ood_margin,
                _ => model.id_margin,
            };
            for (k, out) in logits.row_mut(i).iter_mut().enumerate() {
                let noise: f64 = self.rng.sample(StandardNormal);
                let bump = if k == class { margin } else { 0.0 };
                *out = (bump + model.noise_std * noise) as f32;
            }
        }

        FeatureBatch {
            index: t,
            layers,
            logits: Some(logits),
            labels: Some(labels),
        }
    }
}

impl Iterator for ScenarioGenerator {
    type Item = FeatureBatch;

    fn next(&mut self) -> Option<FeatureBatch> {
        if self.next >= self.spec.num_batches {
            return None;
        }
        let t = self.next;
        self.next += 1;
        Some(self.draw(t))
    }
}

/// Generates the scenario into a DFS1 file at `path`.
pub fn generate(spec: &ScenarioSpec, path: &Path) -> Result<StreamManifest, ScenarioError> {
    let gen = ScenarioGenerator::new(spec.clone())?;
    let file = BufWriter::new(File::create(path)?);
    let mut writer = StreamWriter::new(file, spec.header())?;
    for batch in gen {
        writer.write_batch(&batch)?;
    }
    let (_, batch_sizes) = writer.finish()?;
    let description = if spec.description.is_empty() {
        spec.name.clone()
    } else {
        spec.description.clone()
    };
    Ok(StreamManifest {
        path: path.to_path_buf(),
        header: spec.header(),
        num_batches: batch_sizes.len(),
        batch_sizes,
        description,
        markers: spec.markers(),
    })
}

/// Per-layer running class sums for the oracle axis `mean(ID) - mean(OOD)`.
#[derive(Debug, Clone)]
pub struct OracleAxisAccumulator {
    id_sum: Vec<Vec<f64>>,
    ood_sum: Vec<Vec<f64>>,
    n_id: usize,
    n_ood: usize,
}

impl OracleAxisAccumulator {
    pub fn new(layer_dims: &[u32]) -> Self {
        Self {
            id_sum: layer_dims.iter().map(|&d| vec![0.0; d as usize]).collect(),
            ood_sum: layer_dims.iter().map(|&d| vec![0.0; d as usize]).collect(),
            n_id: 0,
            n_ood: 0,
        }
    }

    pub fn add_batch(&mut self, batch: &FeatureBatch) -> Result<(), ScenarioError> {
        let labels = batch.labels.as_ref().ok_or(ScenarioError::Unlabeled)?;
        for (l, m) in batch.layers.iter().enumerate() {
            for (row, &label) in m.iter_rows().zip(labels) {
                let sum = match label {
                    GroundTruth::Id => &mut self.id_sum[l],
                    GroundTruth::Ood => &mut self.ood_sum[l],
                    GroundTruth::Unknown => continue,
                };
                for (a, &v) in sum.iter_mut().zip(row) {
                    *a += f64::from(v);
                }
            }
        }
        self.n_id += labels.iter().filter(|&&l| l == GroundTruth::Id).count();
        self.n_ood += labels.iter().filter(|&&l| l == GroundTruth::Ood).count();
        Ok(())
    }

    pub fn axis(&self, layer: usize) -> Result<Vec<f64>, ScenarioError> {
        if self.n_id == 0 || self.n_ood == 0 {
            return Err(ScenarioError::SingleClass {
                layer,
                n_id: self.n_id,
                n_ood: self.n_ood,
            });
        }
        Ok(self.id_sum[layer]
            .iter()
            .zip(&self.ood_sum[layer])
            .map(|(a, b)| a / self.n_id as f64 - b / self.n_ood as f64)
            .collect())
    }

    /// Axis for every stream layer.
    pub fn axes(&self) -> Result<Vec<Vec<f64>>, ScenarioError> {
        (0..self.id_sum.len()).map(|l| self.axis(l)).collect()
    }
}

/// Oracle axis of `layer` over a labeled segment.
pub fn oracle_axis<'a, I>(segment: I, layer: usize) -> Result<Vec<f64>, ScenarioError>
where
    I: IntoIterator<Item = &'a FeatureBatch>,
{
    let mut acc: Option<OracleAxisAccumulator> = None;
    for b in segment {
        let acc = acc.get_or_insert_with(|| {
            let dims: Vec<u32> = b.layers.iter().map(|m| m.cols() as u32).collect();
            OracleAxisAccumulator::new(&dims)
        });
        acc.add_batch(b)?;
    }
    match acc {
        Some(a) => a.axis(layer),
        None => Err(ScenarioError::SingleClass {
            layer,
            n_id: 0,
            n_ood: 0,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub layer: usize,
    pub cosine: f64,
    /// Either axis was zero; `cosine` is reported as 0.
    pub degenerate: bool,
}

/// Cosine between each tracked layer's `id - ood` axis and the oracle axis.
/// `oracle` is indexed by stream layer.
pub fn axis_alignment(tracker: &Tracker, oracle: &[Vec<f64>]) -> Vec<Alignment> {
    tracker
        .layers()
        .iter()
        .zip(tracker.prototypes())
        .map(|(&l, p)| {
            let axis = p.axis();
            let degenerate = vector::norm(&axis) == 0.0 || vector::norm(&oracle[l]) == 0.0;
            Alignment {
                layer: l,
                cosine: if degenerate { 0.0 } else { vector::cosine(&axis, &oracle[l]) },
                degenerate,
            }
        })
        .collect()
}

pub mod bundled {
    //! Scenario files shipped with the crate, addressable by name.

    pub const CLEAN_BALANCED: &str = include_str!("../scenarios/clean_balanced.toml");
    pub const COVARIATE_SHIFT: &str = include_str!("../scenarios/covariate_shift.toml");
    pub const CONTINUAL_OOD: &str = include_str!("../scenarios/continual_ood.toml");
    pub const CONTINUAL_SHIFT: &str = include_str!("../scenarios/continual_shift.toml");
    pub const FLIP_INVERTED: &str = include_str!("../scenarios/flip_inverted.toml");
    pub const WELL_SEPARATED_LOGITS: &str = include_str!("../scenarios/well_separated_logits.toml");

    pub const ALL: &[(&str, &str)] = &[
        ("clean_balanced", CLEAN_BALANCED),
        ("covariate_shift", COVARIATE_SHIFT),
        ("continual_ood", CONTINUAL_OOD),
        ("continual_shift", CONTINUAL_SHIFT),
        ("flip_inverted", FLIP_INVERTED),
        ("well_separated_logits", WELL_SEPARATED_LOGITS),
    ];

    pub fn get(name: &str) -> Option<&'static str> {
        ALL.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ScenarioSpec {
        ScenarioSpec::from_toml(
            r#"
            seed = 3
            num_batches = 4
            batch_size = 10
            [[layers]]
            dim = 3
            id_mean = [1.0, 2.0, 3.0]
            ood_mean = { fill = -1.0 }
            id_std = 0.0
            ood_std = 0.0
            [logits]
            num_classes = 4
            id_margin = 5.0
            ood_margin = 0.5
            noise_std = 0.3
            "#,
        )
        .unwrap()
    }

    #[test]
    fn zero_noise_rows_equal_means() {
        for b in ScenarioGenerator::new(tiny_spec()).unwrap() {
            let labels = b.labels.as_ref().unwrap();
            assert_eq!(labels.iter().filter(|&&l| l == GroundTruth::Id).count(), 5);
            for (row, l) in b.layers[0].iter_rows().zip(labels) {
                match l {
                    GroundTruth::Id => assert_eq!(row, &[1.0f32, 2.0, 3.0]),
                    _ => assert_eq!(row, &[-1.0f32; 3]),
                }
            }
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<_> = ScenarioGenerator::new(tiny_spec()).unwrap().collect();
        let b: Vec<_> = ScenarioGenerator::new(tiny_spec()).unwrap().collect();
        assert_eq!(a, b);
        let mut other = tiny_spec();
        other.seed = 4;
        let c: Vec<_> = ScenarioGenerator::new(other).unwrap().collect();
        assert_ne!(a, c);
    }

    #[test]
    fn id_count_guard() {
        let mut s = tiny_spec();
        s.batch_size = 200;
        s.id_ratio = 0.7;
        assert_eq!(s.id_count_at(0), 140);
        s.id_ratio = 0.33;
        assert_eq!(s.id_count_at(0), 66);
        s.id_ratio_schedule = vec![RatioChange { start_batch: 2, id_ratio: 0.9 }];
        assert_eq!(s.id_count_at(1), 66);
        assert_eq!(s.id_count_at(2), 180);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ScenarioSpec::from_toml(
            r#"
            seed = 1
            bogus_key = 3
            layers = []
            [logits]
            num_classes = 2
            id_margin = 1.0
            ood_margin = 0.0
            noise_std = 1.0
            "#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn invalid_fields_are_named() {
        let mut s = tiny_spec();
        s.layers[0].id_mean = VectorSpec::Dense(vec![1.0]);
        let e = s.validate().unwrap_err().to_string();
        assert!(e.contains("layers[0].id_mean"), "{e}");

        let mut s = tiny_spec();
        s.shift_schedule = vec![
            ShiftChange { start_batch: 5, offsets: vec![VectorSpec::Sparse { fill: 0.0, set: vec![] }] },
            ShiftChange { start_batch: 2, offsets: vec![VectorSpec::Sparse { fill: 0.0, set: vec![] }] },
        ];
        assert!(s.validate().unwrap_err().to_string().contains("shift_schedule"));

        let mut s = tiny_spec();
        s.id_ratio = 1.0;
        assert!(s.validate().unwrap_err().to_string().contains("id_ratio"));
    }

    #[test]
    fn oracle_axis_examples() {
        let b = FeatureBatch {
            index: 0,
            layers: vec![Matrix::from_rows(&[[3.0f32, 1.0], [1.0, -1.0]])],
            logits: None,
            labels: Some(vec![GroundTruth::Id, GroundTruth::Ood]),
        };
        assert_eq!(oracle_axis([&b], 0).unwrap(), vec![2.0, 2.0]);

        let mut spec = tiny_spec();
        spec.layers[0].id_mean = VectorSpec::Dense(vec![0.5, -1.0, 2.0]);
        spec.layers[0].ood_mean = VectorSpec::Dense(vec![-0.5, 1.0, -2.0]);
        let batches: Vec<_> = ScenarioGenerator::new(spec).unwrap().collect();
        assert_eq!(oracle_axis(&batches, 0).unwrap(), vec![1.0, -2.0, 4.0]);

        let single = FeatureBatch {
            labels: Some(vec![GroundTruth::Id, GroundTruth::Id]),
            ..b
        };
        assert!(matches!(oracle_axis([&single], 0), Err(ScenarioError::SingleClass { .. })));
    }

    #[test]
    fn bundled_scenarios_parse() {
        for (name, text) in bundled::ALL {
            let spec = ScenarioSpec::from_toml(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&spec.name, name);
        }
    }

    #[test]
    fn markers_list_schedule_events() {
        let spec = ScenarioSpec::from_toml(bundled::CONTINUAL_OOD).unwrap();
        let switches: Vec<u32> = spec
            .markers()
            .iter()
            .filter(|m| m.kind == "ood_source")
            .map(|m| m.batch)
            .collect();
        assert!(!switches.is_empty());
        assert_eq!(
            switches,
            spec.ood_source_schedule.iter().map(|c| c.start_batch).collect::<Vec<_>>()
        );
    }
}

//! Scalar statistics used by the tracker: Otsu thresholding, quartiles and
//! Tukey fences, histogram Jensen-Shannon divergence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_OTSU_BINS: usize = 256;
pub const DEFAULT_IQR_FACTOR: f64 = 1.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("empty input")]
    Empty,
    #[error("non-finite input value")]
    NonFinite,
    #[error("need at least 2 histogram bins, got {0}")]
    TooFewBins(usize),
    #[error("all scores identical ({0}); no threshold separates them")]
    Degenerate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtsuResult {
    pub threshold: f64,
    pub between_class_variance: f64,
    pub bins: usize,
}

impl OtsuResult {
    /// `true` when `score` falls on the upper (ID) side of the threshold.
    pub fn is_upper(&self, score: f64) -> bool {
        score >= self.threshold
    }
}

fn check_finite(values: &[f64]) -> Result<(), StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Interior edges `min + k * width` for `k = 1..bins`, width `(max - min) / bins`.
pub fn histogram_edges(min: f64, max: f64, bins: usize) -> Vec<f64> {
    let width = (max - min) / bins as f64;
    (1..bins).map(|k| min + (k as f64) * width).collect()
}

/// Otsu threshold over a `num_bins` histogram spanning `[min, max]` of `scores`.
///
/// Candidate thresholds are the interior bin edges. For each candidate the
/// scores split into `s < tau` and `s >= tau`, and the split with the smallest
/// within-class sum of squares wins. Candidates within `1e-12` (relative to
/// the total sum of squares) of the optimum count as ties and the smallest
/// edge is taken.
pub fn otsu_threshold(scores: &[f64], num_bins: usize) -> Result<OtsuResult, StatsError> {
    check_finite(scores)?;
    if num_bins < 2 {
        return Err(StatsError::TooFewBins(num_bins));
    }
    let (min, max) = min_max(scores);
    if min == max {
        return Err(StatsError::Degenerate(min));
    }
    let edges = histogram_edges(min, max, num_bins);
    let n = scores.len() as f64;
    let center = scores.iter().sum::<f64>() / n;

    // Per-bin moments of centered scores. Bin b holds scores with exactly b edges <= s,
    // so "bin >= k" is the same set as "s >= edges[k - 1]".
    let mut count = vec![0usize; num_bins];
    let mut sum = vec![0.0f64; num_bins];
    let mut sumsq = vec![0.0f64; num_bins];
    for &s in scores {
        let b = edges.partition_point(|&e| e <= s);
        let c = s - center;
        count[b] += 1;
        sum[b] += c;
        sumsq[b] += c * c;
    }
    let total_n: usize = count.iter().sum();
    let total_sum: f64 = sum.iter().sum();
    let total_sq: f64 = sumsq.iter().sum();

    let mut objective = vec![f64::INFINITY; num_bins];
    let (mut n0, mut s0, mut q0) = (0usize, 0.0f64, 0.0f64);
    for k in 1..num_bins {
        n0 += count[k - 1];
        s0 += sum[k - 1];
        q0 += sumsq[k - 1];
        let n1 = total_n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = total_sum - s0;
        let q1 = total_sq - q0;
        let ss0 = (q0 - s0 * s0 / n0 as f64).max(0.0);
        let ss1 = (q1 - s1 * s1 / n1 as f64).max(0.0);
        objective[k] = ss0 + ss1;
    }

    let best = objective.iter().copied().fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(StatsError::Degenerate(min));
    }
    let total_ss = (total_sq - total_sum * total_sum / n).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * total_ss;
    let k = (1..num_bins)
        .find(|&k| objective[k] <= best + tol)
        .expect("the optimum is among the candidates");
    let threshold = edges[k - 1];

    let mut stats = [(0usize, 0.0f64); 2];
    for &s in scores {
        let side = usize::from(s >= threshold);
        stats[side].0 += 1;
        stats[side].1 += s;
    }
    let w0 = stats[0].0 as f64 / n;
    let w1 = stats[1].0 as f64 / n;
    let m0 = stats[0].1 / stats[0].0 as f64;
    let m1 = stats[1].1 / stats[1].0 as f64;

    Ok(OtsuResult {
        threshold,
        between_class_variance: w0 * w1 * (m0 - m1) * (m0 - m1),
        bins: num_bins,
    })
}

/// First and third quartiles by linear interpolation at `p * (n - 1)`.
pub fn quartiles(values: &[f64]) -> Result<(f64, f64), StatsError> {
    check_finite(values)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&sorted, 0.25), quantile_sorted(&sorted, 0.75)))
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TukeyFence {
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub upper_fence: f64,
    pub k_iqr: f64,
}

impl TukeyFence {
    pub fn from_values(values: &[f64], k_iqr: f64) -> Result<Self, StatsError> {
        let (q1, q3) = quartiles(values)?;
        let iqr = q3 - q1;
        Ok(Self {
            q1,
            q3,
            iqr,
            upper_fence: q3 + k_iqr * iqr,
            k_iqr,
        })
    }

    pub fn keeps(&self, value: f64) -> bool {
        value <= self.upper_fence
    }
}

/// `mask[i]` is true when `distances[i]` is at or below the upper Tukey fence.
/// Only the upper fence applies: small distances are never outliers.
pub fn tukey_keep_mask(distances: &[f64], k_iqr: f64) -> Result<Vec<bool>, StatsError> {
    let fence = TukeyFence::from_values(distances, k_iqr)?;
    Ok(distances.iter().map(|&d| fence.keeps(d)).collect())
}

/// Base-2 Jensen-Shannon divergence between the histograms of `a` and `b`
/// over a shared `num_bins` grid on `[min(a ∪ b), max(a ∪ b)]`.
pub fn histogram_jsd(a: &[f64], b: &[f64], num_bins: usize) -> Result<f64, StatsError> {
    check_finite(a)?;
    check_finite(b)?;
    if num_bins < 1 {
        return Err(StatsError::TooFewBins(num_bins));
    }
    let (amin, amax) = min_max(a);
    let (bmin, bmax) = min_max(b);
    let (min, max) = (amin.min(bmin), amax.max(bmax));
    if min == max {
        return Ok(0.0);
    }
    let width = (max - min) / num_bins as f64;
    let hist = |xs: &[f64]| {
        let mut h = vec![0.0f64; num_bins];
        for &x in xs {
            let b = (((x - min) / width).floor() as usize).min(num_bins - 1);
            h[b] += 1.0;
        }
        let n = xs.len() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    };
    let p = hist(a);
    let q = hist(b);
    let mut jsd = 0.0;
    for (&pi, &qi) in p.iter().zip(&q) {
        let mi = 0.5 * (pi + qi);
        if pi > 0.0 {
            jsd += 0.5 * pi * (pi / mi).log2();
        }
        if qi > 0.0 {
            jsd += 0.5 * qi * (qi / mi).log2();
        }
    }
    Ok(jsd.clamp(0.0, 1.0))
}

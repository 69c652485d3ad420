//! Executable checks of the separation argument behind the discriminative axis.
//!
//! With `d = mean(ID) - mean(OOD)` and the centered projection
//! `s(x) = d . (x - mean(OOD))`, the class means of `s` are exactly `|d|^2`
//! and `0`. If the directional variance of each class is at most
//! `kappa * |d|^2`, Chebyshev at the midpoint `|d|^2 / 2` bounds both miss
//! rates by `4 kappa / |d|^2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vector;

pub const DEFAULT_BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("{0} class has no samples")]
    EmptyClass(&'static str),
    #[error("feature dims differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("class means coincide; the axis is zero")]
    ZeroAxis,
    #[error("within-class scatter is singular even after regularization")]
    Singular,
    #[error("vector lengths differ: gamma {gamma}, sigma_sq {sigma}, delta {delta}")]
    LengthMismatch { gamma: usize, sigma: usize, delta: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("Chebyshev bound violated: miss rate {miss} > bound {bound}")]
    BoundViolated { miss: f64, bound: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KappaMode {
    /// Smallest constant satisfying the directional-variance assumption on this data.
    Empirical,
    Supplied(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub axis: Vec<f64>,
    pub axis_norm_sq: f64,
    pub kappa: f64,
    pub kappa_empirical: f64,
    pub bound: f64,
    pub threshold: f64,
    pub empirical_id_miss: f64,
    pub empirical_ood_miss: f64,
    pub id_projected_mean: f64,
    pub ood_projected_mean: f64,
    /// `max(|E[s|ID] - |d|^2|, |E[s|OOD]|) / |d|^2`.
    pub mean_identity_error: f64,
    pub bound_holds: bool,
    pub id_slack: f64,
    pub ood_slack: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

fn check_classes(id: &[Vec<f64>], ood: &[Vec<f64>]) -> Result<usize, TheoryError> {
    let first_id = id.first().ok_or(TheoryError::EmptyClass("ID"))?;
    let first_ood = ood.first().ok_or(TheoryError::EmptyClass("OOD"))?;
    let dim = first_id.len();
    if first_ood.len() != dim {
        return Err(TheoryError::DimMismatch(dim, first_ood.len()));
    }
    if let Some(r) = id.iter().chain(ood).find(|r| r.len() != dim) {
        return Err(TheoryError::DimMismatch(dim, r.len()));
    }
    Ok(dim)
}

pub fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, v) in m.iter_mut().zip(r) {
            *a += v;
        }
    }
    let n = rows.len() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v)
}

pub fn separation_report(id: &[Vec<f64>], ood: &[Vec<f64>], kappa: KappaMode) -> Result<SeparationReport, TheoryError> {
    check_classes(id, ood)?;
    let mu_id = mean_rows(id);
    let mu_ood = mean_rows(ood);
    let axis = vector::sub(&mu_id, &mu_ood);
    let norm_sq = vector::dot(&axis, &axis);
    if norm_sq == 0.0 {
        return Err(TheoryError::ZeroAxis);
    }
    let project = |rows: &[Vec<f64>]| -> Vec<f64> {
        rows.iter()
            .map(|x| x.iter().zip(&mu_ood).zip(&axis).map(|((xi, oi), di)| di * (xi - oi)).sum())
            .collect()
    };
    let s_id = project(id);
    let s_ood = project(ood);
    let (m_id, v_id) = mean_var(&s_id);
    let (m_ood, v_ood) = mean_var(&s_ood);
    let kappa_empirical = v_id.max(v_ood) / norm_sq;
    let kappa_used = match kappa {
        KappaMode::Empirical => kappa_empirical,
        KappaMode::Supplied(k) => {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(TheoryError::Invalid(format!("kappa {k}")));
            }
            k
        }
    };
    let bound = 4.0 * kappa_used / norm_sq;
    let threshold = norm_sq / 2.0;
    let id_miss = s_id.iter().filter(|&&s| s < threshold).count() as f64 / s_id.len() as f64;
    let ood_miss = s_ood.iter().filter(|&&s| s >= threshold).count() as f64 / s_ood.len() as f64;
    let bound_holds = id_miss <= bound && ood_miss <= bound;
    if kappa == KappaMode::Empirical && !bound_holds {
        return Err(TheoryError::BoundViolated {
            miss: id_miss.max(ood_miss),
            bound,
        });
    }
    Ok(SeparationReport {
        axis,
        axis_norm_sq: norm_sq,
        kappa: kappa_used,
        kappa_empirical,
        bound,
        threshold,
        empirical_id_miss: id_miss,
        empirical_ood_miss: ood_miss,
        id_projected_mean: m_id,
        ood_projected_mean: m_ood,
        mean_identity_error: (m_id - norm_sq).abs().max(m_ood.abs()) / norm_sq,
        bound_holds,
        id_slack: bound - id_miss,
        ood_slack: bound - ood_miss,
        n_id: id.len(),
        n_ood: ood.len(),
    })
}

fn covariance(rows: &[Vec<f64>], mean: &[f64]) -> DMatrix<f64> {
    let d = mean.len();
    let mut c = DMatrix::<f64>::zeros(d, d);
    for r in rows {
        let x = DVector::from_iterator(d, r.iter().zip(mean).map(|(a, b)| a - b));
        c.ger(1.0, &x, &x, 1.0);
    }
    c / rows.len() as f64
}

/// Cosine between `d` and the Fisher direction `S_W^{-1} d`, where
/// `S_W = Cov(ID) + Cov(OOD) + delta I` and `delta = 1e-8 * trace / dim`.
pub fn fisher_alignment(id: &[Vec<f64>], ood: &[Vec<f64>]) -> Result<f64, TheoryError> {
    let dim = check_classes(id, ood)?;
    let mu_id = mean_rows(id);
    let mu_ood = mean_rows(ood);
    let axis = vector::sub(&mu_id, &mu_ood);
    if vector::norm(&axis) == 0.0 {
        return Err(TheoryError::ZeroAxis);
    }
    let mut scatter = covariance(id, &mu_id) + covariance(ood, &mu_ood);
    let delta = 1e-8 * scatter.trace() / dim as f64;
    for i in 0..dim {
        scatter[(i, i)] += delta;
    }
    let d = DVector::from_column_slice(&axis);
    let w = match scatter.clone().cholesky() {
        Some(ch) => ch.solve(&d),
        None => scatter.lu().solve(&d).ok_or(TheoryError::Singular)?,
    };
    Ok(vector::cosine(&axis, w.as_slice()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnDecomposition {
    pub lambda: Vec<f64>,
    pub delta: Vec<f64>,
    pub contributions: Vec<f64>,
    pub total: f64,
    pub mean_lambda: f64,
    /// Population standard deviation of `lambda` over its mean.
    pub cv_lambda: f64,
}

/// Splits `|d|^2 = sum_k lambda_k^2 delta_k^2` with `lambda_k = gamma_k / sqrt(sigma_k^2 + eps)`.
///
/// The total sums contributions in ascending order, so it does not depend on
/// channel order.
pub fn bn_decompose(gamma: &[f64], sigma_id_sq: &[f64], delta: &[f64], epsilon: f64) -> Result<BnDecomposition, TheoryError> {
    if gamma.len() != sigma_id_sq.len() || gamma.len() != delta.len() {
        return Err(TheoryError::LengthMismatch {
            gamma: gamma.len(),
            sigma: sigma_id_sq.len(),
            delta: delta.len(),
        });
    }
    if gamma.is_empty() {
        return Err(TheoryError::Invalid("no channels".into()));
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(TheoryError::Invalid(format!("epsilon {epsilon} must be positive")));
    }
    if let Some(s) = sigma_id_sq.iter().find(|&&s| s.is_nan() || s < 0.0) {
        return Err(TheoryError::Invalid(format!("negative variance {s}")));
    }
    let lambda: Vec<f64> = gamma
        .iter()
        .zip(sigma_id_sq)
        .map(|(g, s)| g / (s + epsilon).sqrt())
        .collect();
    let contributions: Vec<f64> = lambda
        .iter()
        .zip(delta)
        .map(|(l, d)| (l * l) * (d * d))
        .collect();
    let mut sorted = contributions.clone();
    sorted.sort_by(f64::total_cmp);
    let total = sorted.iter().sum();

    let k = lambda.len() as f64;
    let mean_lambda = lambda.iter().sum::<f64>() / k;
    let var = lambda.iter().map(|l| (l - mean_lambda).powi(2)).sum::<f64>() / k;
    Ok(BnDecomposition {
        lambda,
        delta: delta.to_vec(),
        contributions,
        total,
        mean_lambda,
        cv_lambda: if mean_lambda == 0.0 { 0.0 } else { var.sqrt() / mean_lambda.abs() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn point_masses() {
        let id = vec![vec![1.0, 0.0]; 3];
        let ood = vec![vec![0.0, 0.0]; 2];
        let r = separation_report(&id, &ood, KappaMode::Empirical).unwrap();
        assert_eq!(r.kappa, 0.0);
        assert_eq!(r.bound, 0.0);
        assert_eq!(r.empirical_id_miss, 0.0);
        assert_eq!(r.empirical_ood_miss, 0.0);
        assert!(r.bound_holds);
        assert_eq!(r.threshold, 0.5);
    }

    #[test]
    fn zero_axis_and_empty() {
        let a = vec![vec![1.0, 2.0]];
        assert_eq!(separation_report(&a, &a, KappaMode::Empirical), Err(TheoryError::ZeroAxis));
        assert_eq!(separation_report(&a, &[], KappaMode::Empirical), Err(TheoryError::EmptyClass("OOD")));
        assert_eq!(fisher_alignment(&a, &a), Err(TheoryError::ZeroAxis));
    }

    #[test]
    fn supplied_kappa_can_fail_the_bound() {
        let id = vec![vec![1.0], vec![-0.2], vec![1.2]];
        let ood = vec![vec![0.0], vec![0.1]];
        let r = separation_report(&id, &ood, KappaMode::Supplied(0.0)).unwrap();
        assert!(!r.bound_holds);
        assert!(r.id_slack < 0.0);
        assert!(separation_report(&id, &ood, KappaMode::Empirical).unwrap().bound_holds);
    }

    /// Four points per class at `mean ± a e1`, `mean ± b e2`: covariance diag(a²/2, b²/2).
    fn cross(mean: [f64; 2], a: f64, b: f64) -> Vec<Vec<f64>> {
        vec![
            vec![mean[0] + a, mean[1]],
            vec![mean[0] - a, mean[1]],
            vec![mean[0], mean[1] + b],
            vec![mean[0], mean[1] - b],
        ]
    }

    #[test]
    fn fisher_isotropic_is_aligned() {
        let c = fisher_alignment(&cross([1.0, 1.0], 1.0, 1.0), &cross([0.0, 0.0], 1.0, 1.0)).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fisher_anisotropic_hand_case() {
        // var 100 along x, 1 along y in each class; d = (1, 1).
        // S_W = diag(200, 2), S_W^-1 d ∝ (0.01, 1), cos = 1.01 / (sqrt 2 * sqrt 1.0001)
        let a = 200f64.sqrt();
        let b = 2f64.sqrt();
        let c = fisher_alignment(&cross([1.0, 1.0], a, b), &cross([0.0, 0.0], a, b)).unwrap();
        let expected = 1.01 / (2f64.sqrt() * 1.0001f64.sqrt());
        assert!((c - expected).abs() < 1e-6, "{c} vs {expected}");
        assert!(c < 0.8);
        // label swap negates d but not |cos|
        let swapped = fisher_alignment(&cross([0.0, 0.0], a, b), &cross([1.0, 1.0], a, b)).unwrap();
        assert!((swapped.abs() - c.abs()).abs() < 1e-12);
    }

    #[test]
    fn bn_unit_scaling() {
        let k = 8;
        let eps = DEFAULT_BN_EPSILON;
        let r = bn_decompose(&vec![1.0; k], &vec![1.0 - eps; k], &vec![1.0; k], eps).unwrap();
        for l in &r.lambda {
            assert!((l - 1.0).abs() < 1e-12);
        }
        assert!((r.total - k as f64).abs() < 1e-9);
        assert!(r.cv_lambda < 1e-12);
    }

    #[test]
    fn bn_resnet_scale_arithmetic() {
        // mean lambda 23.3 over 2048 channels with a 0.01 pre-BN shift each
        let k = 2048;
        let eps = DEFAULT_BN_EPSILON;
        let gamma = vec![23.3 * (1.0 + eps).sqrt(); k];
        let r = bn_decompose(&gamma, &vec![1.0; k], &vec![0.01; k], eps).unwrap();
        assert!((r.mean_lambda - 23.3).abs() < 1e-9);
        let expected = 2048.0 * (23.3f64 * 0.01).powi(2);
        assert!((r.total - expected).abs() < 1e-6);
        assert!((r.total - 111.2).abs() < 0.05);
    }

    #[test]
    fn bn_errors() {
        assert!(matches!(
            bn_decompose(&[1.0], &[1.0, 2.0], &[1.0], 1e-5),
            Err(TheoryError::LengthMismatch { .. })
        ));
        assert!(bn_decompose(&[1.0], &[-1.0], &[1.0], 1e-5).is_err());
        assert!(bn_decompose(&[1.0], &[1.0], &[1.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn bn_homogeneity_and_permutation(
            ch in prop::collection::vec((0.1f64..3.0, 0.0f64..4.0, -1.0f64..1.0), 1..64),
            rot in 0usize..64,
        ) {
            let gamma: Vec<f64> = ch.iter().map(|c| c.0).collect();
            let sigma: Vec<f64> = ch.iter().map(|c| c.1).collect();
            let delta: Vec<f64> = ch.iter().map(|c| c.2).collect();
            let base = bn_decompose(&gamma, &sigma, &delta, 1e-5).unwrap();
            let doubled: Vec<f64> = delta.iter().map(|d| 2.0 * d).collect();
            let dbl = bn_decompose(&gamma, &sigma, &doubled, 1e-5).unwrap();
            prop_assert_eq!(dbl.total, 4.0 * base.total);

            let r = rot % gamma.len();
            let rotate = |v: &[f64]| { let mut v = v.to_vec(); v.rotate_left(r); v };
            let p = bn_decompose(&rotate(&gamma), &rotate(&sigma), &rotate(&delta), 1e-5).unwrap();
            prop_assert_eq!(p.total, base.total);

            let direct: f64 = base.contributions.iter().sum();
            prop_assert!((direct - base.total).abs() <= 1e-9 * base.total.max(1e-300));
        }

        #[test]
        fn chebyshev_always_holds(
            id in prop::collection::vec(prop::collection::vec(-3.0f64..5.0, 3), 2..40),
            ood in prop::collection::vec(prop::collection::vec(-5.0f64..3.0, 3), 2..40),
        ) {
            match separation_report(&id, &ood, KappaMode::Empirical) {
                Ok(r) => {
                    prop_assert!(r.bound_holds);
                    prop_assert!(r.mean_identity_error < 1e-9);
                }
                Err(TheoryError::ZeroAxis) => {}
                Err(e) => prop_assert!(false, "{}", e),
            }
        }
    }
}

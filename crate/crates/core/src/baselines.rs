//! Logit-only reference scorers. Every score is oriented so that higher means
//! more in-distribution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream_io::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("need at least 2 logit columns, got {0}")]
    TooFewClasses(usize),
    #[error("energy temperature must be positive, got {0}")]
    BadTemperature(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineKind {
    Msp,
    MaxLogit,
    Energy { temperature: f64 },
}

impl BaselineKind {
    pub fn energy() -> Self {
        BaselineKind::Energy { temperature: 1.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Msp => "msp",
            BaselineKind::MaxLogit => "maxlogit",
            BaselineKind::Energy { .. } => "energy",
        }
    }
}

fn row_max(row: &[f32]) -> f64 {
    row.iter().map(|&v| f64::from(v)).fold(f64::NEG_INFINITY, f64::max)
}

/// `log Σ exp(row / t)` with max subtraction.
fn log_sum_exp(row: &[f32], t: f64) -> f64 {
    let m = row_max(row) / t;
    let s: f64 = row.iter().map(|&v| (f64::from(v) / t - m).exp()).sum();
    m + s.ln()
}

pub fn score(kind: BaselineKind, logits: &Matrix) -> Result<Vec<f64>, BaselineError> {
    if logits.cols() < 2 {
        return Err(BaselineError::TooFewClasses(logits.cols()));
    }
    match kind {
        BaselineKind::Msp => Ok(logits
            .iter_rows()
            .map(|row| (row_max(row) - log_sum_exp(row, 1.0)).exp())
            .collect()),
        BaselineKind::MaxLogit => Ok(logits.iter_rows().map(row_max).collect()),
        BaselineKind::Energy { temperature } => {
            if temperature.is_nan() || temperature <= 0.0 {
                return Err(BaselineError::BadTemperature(temperature));
            }
            // negative free energy: T * logsumexp(o / T)
            Ok(logits
                .iter_rows()
                .map(|row| temperature * log_sum_exp(row, temperature))
                .collect())
        }
    }
}

/// Maximum softmax probability per row.
pub fn msp(logits: &Matrix) -> Result<Vec<f64>, BaselineError> {
    score(BaselineKind::Msp, logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one(row: &[f32]) -> Matrix {
        Matrix::from_rows(&[row])
    }

    #[test]
    fn msp_examples() {
        let v = msp(&one(&[10.0, 0.0])).unwrap()[0];
        assert!((v - 1.0 / (1.0 + (-10.0f64).exp())).abs() < 1e-15);
        let u = msp(&one(&[2.5, 2.5, 2.5])).unwrap()[0];
        assert!((u - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn maxlogit_and_energy() {
        assert_eq!(score(BaselineKind::MaxLogit, &one(&[3.0, -1.0, 0.0])).unwrap(), vec![3.0]);
        let e = score(BaselineKind::energy(), &one(&[0.0, 0.0])).unwrap()[0];
        assert!((e - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert_eq!(msp(&one(&[1.0])), Err(BaselineError::TooFewClasses(1)));
        assert_eq!(
            score(BaselineKind::Energy { temperature: 0.0 }, &one(&[1.0, 2.0])),
            Err(BaselineError::BadTemperature(0.0))
        );
    }

    #[test]
    fn large_logits_stay_finite() {
        let m = one(&[1e30, -1e30, 0.0]);
        assert_eq!(msp(&m).unwrap()[0], 1.0);
        assert!(score(BaselineKind::energy(), &m).unwrap()[0].is_finite());
    }

    proptest! {
        #[test]
        fn shift_behaviour(row in prop::collection::vec(-20.0f32..20.0, 2..12), c in -8.0f32..8.0) {
            let shifted: Vec<f32> = row.iter().map(|v| v + c).collect();
            let (a, b) = (one(&row), one(&shifted));
            let msp_a = msp(&a).unwrap()[0];
            let msp_b = msp(&b).unwrap()[0];
            prop_assert!((msp_a - msp_b).abs() < 1e-5);
            let e_a = score(BaselineKind::energy(), &a).unwrap()[0];
            let e_b = score(BaselineKind::energy(), &b).unwrap()[0];
            let max_a = score(BaselineKind::MaxLogit, &a).unwrap()[0];
            let max_b = score(BaselineKind::MaxLogit, &b).unwrap()[0];
            // the shifted row is stored as f32, so compare against the realized shift
            let realized = max_b - max_a;
            prop_assert!((e_b - e_a - realized).abs() < 1e-4);
            prop_assert!((realized - f64::from(c)).abs() < 1e-4);
            prop_assert!(msp_a > 0.0 && msp_a <= 1.0);
        }

        #[test]
        fn energy_between_max_and_max_plus_log_c(row in prop::collection::vec(-30.0f32..30.0, 2..16)) {
            let m = one(&row);
            let e = score(BaselineKind::energy(), &m).unwrap()[0];
            let mx = score(BaselineKind::MaxLogit, &m).unwrap()[0];
            prop_assert!(e >= mx - 1e-12);
            prop_assert!(e <= mx + (row.len() as f64).ln() + 1e-12);
        }
    }
}

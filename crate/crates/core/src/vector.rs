//! Dense vector helpers shared by the tracker, oracle and theory code.

use crate::stream_io::Matrix;

/// Euclidean distance between an `f32` feature row and an `f64` prototype.
pub fn distance(z: &[f32], p: &[f64]) -> f64 {
    debug_assert_eq!(z.len(), p.len());
    z.iter()
        .zip(p)
        .map(|(&a, &b)| {
            let d = f64::from(a) - b;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Mean of the selected rows of `m`, or `None` if nothing is selected.
pub fn mean_of_rows<I>(m: &Matrix, rows: I) -> Option<Vec<f64>>
where
    I: IntoIterator<Item = usize>,
{
    let mut acc = vec![0.0f64; m.cols()];
    let mut n = 0usize;
    for i in rows {
        for (a, &v) in acc.iter_mut().zip(m.row(i)) {
            *a += f64::from(v);
        }
        n += 1;
    }
    if n == 0 {
        return None;
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Some(acc)
}

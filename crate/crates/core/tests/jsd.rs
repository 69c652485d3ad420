use dart_core::stats::histogram_jsd;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Average of the two KL divergences to the midpoint, natural log, converted to bits.
fn jsd_from_definition(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let density = |xs: &[f64]| -> Vec<f64> {
        (0..bins)
            .map(|k| {
                let hits = xs
                    .iter()
                    .filter(|&&x| {
                        let bin = (((x - lo) / width).floor() as usize).min(bins - 1);
                        bin == k
                    })
                    .count();
                hits as f64 / xs.len() as f64
            })
            .collect()
    };
    let p = density(a);
    let q = density(b);
    let m: Vec<f64> = p.iter().zip(&q).map(|(x, y)| (x + y) / 2.0).collect();
    let kl = |x: &[f64]| -> f64 {
        x.iter()
            .zip(&m)
            .filter(|(xi, _)| **xi > 0.0)
            .map(|(xi, mi)| xi * (xi / mi).ln())
            .sum()
    };
    (kl(&p) + kl(&q)) / 2.0 / std::f64::consts::LN_2
}

#[test]
fn gaussian_pair_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a: Vec<f64> = Normal::new(0.0, 1.0).unwrap().sample_iter(&mut rng).take(500).collect();
    let b: Vec<f64> = Normal::new(4.0, 1.0).unwrap().sample_iter(&mut rng).take(500).collect();
    let got = histogram_jsd(&a, &b, 64).unwrap();
    let want = jsd_from_definition(&a, &b, 64);
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    assert!(got > 0.8 && got < 1.0);
}

#[test]
fn disjoint_supports_are_one_bit() {
    let a = [0.0; 10];
    let b = [1.0; 7];
    assert_eq!(histogram_jsd(&a, &b, 16).unwrap(), 1.0);
    assert_eq!(histogram_jsd(&a, &a, 16).unwrap(), 0.0);
}

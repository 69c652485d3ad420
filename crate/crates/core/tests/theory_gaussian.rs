use dart_core::theory::{separation_report, KappaMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

fn cloud(rng: &mut ChaCha8Rng, n: usize, first: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut x: Vec<f64> = (0..64).map(|_| StandardNormal.sample(rng)).collect();
            x[0] += first;
            x
        })
        .collect()
}

#[test]
fn miss_rates_follow_the_gaussian_tail() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 5000;
    let id = cloud(&mut rng, n, 4.0);
    let ood = cloud(&mut rng, n, 0.0);
    let r = separation_report(&id, &ood, KappaMode::Empirical).unwrap();
    assert!(r.bound_holds);
    assert!(r.empirical_id_miss <= r.bound && r.empirical_ood_miss <= r.bound);

    // the estimated axis carries sampling noise in 63 extra dims, so its
    // separation is sqrt(16 + 63 * 2 / n) rather than 4
    let half_gap = (16.0f64 + 126.0 / n as f64).sqrt() / 2.0;
    let tail = Normal::new(0.0, 1.0).unwrap().cdf(-half_gap);
    let se = (tail * (1.0 - tail) / n as f64).sqrt();
    for miss in [r.empirical_id_miss, r.empirical_ood_miss] {
        assert!((miss - tail).abs() < 4.0 * se + 0.003, "{miss} vs {tail}");
    }
}

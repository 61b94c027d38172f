mod common;

use dosecurve_core::posterior::{log_posterior, LatentPoint, ObjectiveSpec, PriorSet};
use dosecurve_core::solver::map_fit;
use dosecurve_core::SolverOptions;
use dosecurve_core::transform::ModelKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TAU: f64 = 3.0;

fn tight() -> SolverOptions {
    SolverOptions { tol: 1e-11, max_iter: 5000, restarts: 2, ..SolverOptions::default() }
}

#[test]
fn objective_matches_literal_display() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let points = rng.random_range(3..8);
        let x = common::random_grid(&mut rng, points);
        let data = common::random_dataset(&mut rng, &x, -0.5, 1.5, 6);
        let spec = ObjectiveSpec::new(common::grid(&x), ModelKind::Identity, PriorSet::standard(TAU));
        let p = LatentPoint {
            mu: x.iter().map(|_| rng.random_range(0.0..1.0)).collect(),
            gamma: rng.random_range(0.01..10.0),
            theta: None,
            heterogeneity: None,
        };
        let ours = log_posterior(&p, &data, None, &spec).unwrap();
        let lit = common::limap_literal(&p.mu, p.gamma, &x, &data, TAU);
        assert!((ours - lit).abs() <= 1e-10 * lit.abs().max(1.0), "{ours} vs {lit}");
    }
}

#[test]
fn map_estimate_matches_reduction_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0;
    while checked < 100 {
        let points = rng.random_range(3..7);
        let x = common::random_grid(&mut rng, points);
        let data = common::random_dataset(&mut rng, &x, 0.25, 0.75, 30);
        let oracle = common::limap_oracle(&x, &data, TAU);
        if oracle.mu.iter().any(|m| !(0.02..0.98).contains(m)) {
            continue;
        }
        let spec = ObjectiveSpec::new(common::grid(&x), ModelKind::Identity, PriorSet::standard(TAU));
        let fit = map_fit(&spec, &data, None, &tight()).unwrap();
        for (a, b) in fit.mu_hat.iter().zip(&oracle.mu) {
            assert!((a - b).abs() <= 1e-10, "mu {a} vs {b}");
        }
        assert!((fit.gamma_hat - oracle.gamma).abs() <= 1e-8 * oracle.gamma, "{} vs {}", fit.gamma_hat, oracle.gamma);
        assert!(fit.objective >= oracle.objective - 1e-10);
        checked += 1;
    }
}

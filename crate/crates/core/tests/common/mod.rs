//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use dosecurve_core::posterior::{TrialDataset, TrialKind};
use dosecurve_core::DoseGrid;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Second-difference coefficients of interior point `i`, read off the
/// stencil 2·[(z₊ − z)/(h₊(h₊ + h₋)) − (z − z₋)/(h₋(h₊ + h₋))].
fn stencil(x: &[f64], i: usize) -> [f64; 3] {
    let (hm, hp) = (x[i] - x[i - 1], x[i + 1] - x[i]);
    let span = hm + hp;
    [2.0 / (hm * span), -2.0 / (hp * span) - 2.0 / (hm * span), 2.0 / (hp * span)]
}

/// Trapezoid-like weights written straight from the boundary rules.
fn weights(x: &[f64]) -> Vec<f64> {
    let m = x.len() - 1;
    (1..m)
        .map(|i| {
            if m == 2 {
                x[2] - x[0]
            } else if i == 1 {
                (x[2] + x[1]) / 2.0 - x[0]
            } else if i == m - 1 {
                x[m] - (x[m - 1] + x[m - 2]) / 2.0
            } else {
                (x[i + 1] - x[i - 1]) / 2.0
            }
        })
        .collect()
}

/// Quadratic form `D` with `S² = μᵀ D μ` under the identity default model.
pub fn curvature_form(x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let w = weights(x);
    let mut d = DMatrix::zeros(n, n);
    for i in 1..n - 1 {
        let c = stencil(x, i);
        for a in 0..3 {
            for b in 0..3 {
                d[(i - 1 + a, i - 1 + b)] += w[i - 1] * c[a] * c[b];
            }
        }
    }
    d
}

/// LiMAP display evaluated literally from raw responses, constants dropped:
/// −γ²/(2τ²) + log γ − S²/(2γ²) − Σᵢⱼ (Yᵢⱼ − μᵢ)²/(2σ²).
pub fn limap_literal(mu: &[f64], gamma: f64, x: &[f64], data: &TrialDataset<f64>, tau: f64) -> f64 {
    let w = weights(x);
    let mut s2 = 0.0;
    for i in 1..x.len() - 1 {
        let c = stencil(x, i);
        let d2 = c[0] * mu[i - 1] + c[1] * mu[i] + c[2] * mu[i + 1];
        s2 += d2 * d2 * w[i - 1];
    }
    let sigma = data.sigma();
    let mut lik = 0.0;
    for (dose, ys) in data.doses().iter().zip(data.responses()) {
        let i = x.iter().position(|v| (v - dose).abs() < 1e-12).expect("dose on grid");
        for y in ys {
            lik -= (y - mu[i]).powi(2) / (2.0 * sigma * sigma);
        }
    }
    -gamma * gamma / (2.0 * tau * tau) + gamma.ln() - s2 / (2.0 * gamma * gamma) + lik
}

#[derive(Clone, Debug)]
pub struct LimapOptimum {
    pub mu: Vec<f64>,
    pub gamma: f64,
    pub objective: f64,
}

/// LiMAP MAP estimate by reduction: for fixed γ the objective is quadratic in
/// μ, so μ̂(γ) solves (D/γ² + N/σ²) μ = N ȳ/σ²; γ̂ is the best root of the
/// profile derivative −γ/τ² + 1/γ + S(μ̂(γ))²/γ³ (envelope theorem).
/// Every grid dose must carry data.
pub fn limap_oracle(x: &[f64], data: &TrialDataset<f64>, tau: f64) -> LimapOptimum {
    let n = x.len();
    let d = curvature_form(x);
    let sigma2 = data.sigma() * data.sigma();
    let mut prec = DVector::zeros(n);
    let mut rhs = DVector::zeros(n);
    for (dose, ys) in data.doses().iter().zip(data.responses()) {
        let i = x.iter().position(|v| (v - dose).abs() < 1e-12).expect("dose on grid");
        prec[i] += ys.len() as f64 / sigma2;
        rhs[i] += ys.iter().sum::<f64>() / sigma2;
    }
    let mu_at = |gamma: f64| -> DVector<f64> {
        let a = &d / (gamma * gamma) + DMatrix::from_diagonal(&prec);
        a.cholesky().expect("positive definite").solve(&rhs)
    };
    let slope = |lg: f64| {
        let g = lg.exp();
        let mu = mu_at(g);
        let s2 = (mu.transpose() * &d * &mu)[(0, 0)];
        -g / (tau * tau) + 1.0 / g + s2 / g.powi(3)
    };
    let profile = |g: f64| {
        let mu = mu_at(g);
        limap_literal(mu.as_slice(), g, x, data, tau)
    };
    // bracket every + → − sign change of the slope on a log grid
    let grid: Vec<f64> = (0..=400).map(|k| (1e-4f64).ln() + k as f64 * (1e7f64).ln() / 400.0).collect();
    let mut best: Option<(f64, f64)> = None;
    for w in grid.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        if !(slope(lo) > 0.0 && slope(hi) <= 0.0) {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let g = (0.5 * (lo + hi)).exp();
        let f = profile(g);
        if best.is_none_or(|(bf, _)| f > bf) {
            best = Some((f, g));
        }
    }
    let (objective, gamma) = best.expect("profile derivative changes sign");
    LimapOptimum { mu: mu_at(gamma).as_slice().to_vec(), gamma, objective }
}

/// Dataset with arm means drawn uniformly from `[lo, hi]` and a small number of
/// noisy responses around each.
pub fn random_dataset<R: Rng>(rng: &mut R, doses: &[f64], lo: f64, hi: f64, max_n: usize) -> TrialDataset<f64> {
    random_trial(rng, TrialKind::Current, doses, lo, hi, max_n)
}

pub fn random_trial<R: Rng>(rng: &mut R, kind: TrialKind, doses: &[f64], lo: f64, hi: f64, max_n: usize) -> TrialDataset<f64> {
    let responses = doses
        .iter()
        .map(|_| {
            let centre = rng.random_range(lo..hi);
            let n = rng.random_range(2..=max_n);
            (0..n).map(|_| centre + rng.random_range(-0.3..0.3)).collect()
        })
        .collect();
    let sigma = rng.random_range(0.3..1.5);
    TrialDataset::new(kind, sigma, doses.to_vec(), responses).expect("valid dataset")
}

/// Sorted random grid on [0, 1] with both endpoints and gaps of at least 0.05.
pub fn random_grid<R: Rng>(rng: &mut R, points: usize) -> Vec<f64> {
    loop {
        let mut x: Vec<f64> = (0..points - 2).map(|_| rng.random_range(0.05..0.95)).collect();
        x.push(0.0);
        x.push(1.0);
        x.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if x.windows(2).all(|w| w[1] - w[0] >= 0.05) {
            return x;
        }
    }
}

pub fn grid(x: &[f64]) -> DoseGrid {
    DoseGrid::new(x.to_vec()).expect("valid grid")
}

/// Outcome of one optimizer-versus-grid comparison.
#[derive(Clone, Debug)]
pub struct OracleComparison {
    pub objective_gap: f64,
    pub cell_bound: f64,
    /// Largest |μ̂ᵢ − oracle μᵢ| divided by that axis' cell width.
    pub mu_cells: f64,
}

impl OracleComparison {
    pub fn passes(&self) -> bool {
        self.objective_gap.abs() <= self.cell_bound && self.mu_cells <= 1.0
    }
}

/// LiMAP on random three-dose (M = 2) instances, fitted by the optimizer and
/// by exhaustive search over μ₀, μ₁, μ₂ and γ.
pub fn oracle_comparisons(instances: usize, seed: u64) -> Vec<OracleComparison> {
    use dosecurve_core::posterior::{ObjectiveSpec, Posterior, PriorSet};
    use dosecurve_core::solver::{grid_search_oracle, map_fit_posterior, oracle_cell_bound, Axis, OracleGrid};
    use dosecurve_core::transform::ModelKind;
    use dosecurve_core::SolverOptions;
    use rand::SeedableRng;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .map(|_| {
            let x = vec![0.0, rng.random_range(0.2..0.8), 1.0];
            let data = random_dataset(&mut rng, &x, 0.25, 0.75, 30);
            let spec = ObjectiveSpec::new(grid(&x), ModelKind::Identity, PriorSet::standard(3.0));
            let posterior = Posterior::new(spec, &data, None).expect("valid instance");
            let mu_axis = Axis::linear(0.0, 1.0, 41);
            let axes = OracleGrid::uniform(3, mu_axis, Axis::geometric(1.0, 30.0, 31));
            let oracle = grid_search_oracle(&posterior, &axes).expect("grid fits the cap");
            let bound = oracle_cell_bound(&posterior, &axes, &oracle).expect("same layout");
            let fit = map_fit_posterior(&posterior, &SolverOptions::default()).expect("fit");
            let mu_cells = fit
                .mu_hat
                .iter()
                .zip(&oracle.mu_hat)
                .map(|(a, b)| (a - b).abs() / mu_axis.cell())
                .fold(0.0, f64::max);
            OracleComparison { objective_gap: fit.objective - oracle.objective, cell_bound: bound, mu_cells }
        })
        .collect()
}

/// Worst gradient-check discrepancy over `points` random strictly feasible
/// points of each (model kind, borrowing) combination, in that order:
/// LiMAP, LiMAP + borrowing, SEMAP, SEMAP + borrowing.
pub fn gradient_discrepancies(points: usize, seed: u64) -> Vec<(String, f64)> {
    use dosecurve_core::posterior::{Heterogeneity, LatentPoint, ObjectiveSpec, Posterior, PriorSet};
    use dosecurve_core::solver::gradient_check;
    use dosecurve_core::transform::{EmaxParams, ModelKind};
    use dosecurve_core::Error;
    use rand::SeedableRng;

    let x = [0.0, 0.15, 0.5, 0.8, 1.0];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for kind in [ModelKind::Identity, ModelKind::SigmoidEmax] {
        for borrow in [false, true] {
            let mut worst: f64 = 0.0;
            let mut checked = 0;
            while checked < points {
                let current = random_trial(&mut rng, TrialKind::Current, &x, 0.0, 0.6, 10);
                let historical = borrow.then(|| random_trial(&mut rng, TrialKind::Historical, &[0.0, 0.8, 1.0], -0.2, 0.5, 10));
                let spec = ObjectiveSpec::new(grid(&x), kind, PriorSet::standard(if kind == ModelKind::Identity { 3.0 } else { 0.5 }));
                let posterior = Posterior::new(spec, &current, historical.as_ref()).expect("valid instance");
                let theta = (kind == ModelKind::SigmoidEmax).then(|| EmaxParams {
                    e0: 0.0,
                    emax: rng.random_range(0.2..1.5),
                    ed50: rng.random_range(0.05..0.95),
                    hill: rng.random_range(0.5..5.0),
                });
                // strictly inside the range of φ, where φ⁻¹ is the closed form
                let mu_hi = theta.map_or(0.98, |t: EmaxParams<f64>| (0.95 * t.emax).min(0.98));
                let point = LatentPoint {
                    mu: x.iter().map(|_| rng.random_range(0.02..mu_hi)).collect(),
                    gamma: rng.random_range(0.05..5.0),
                    theta,
                    heterogeneity: borrow.then(|| Heterogeneity { a: rng.random_range(0.4..2.5), r: rng.random_range(-0.5..0.5) }),
                };
                match gradient_check(&posterior, &point, 1e-6) {
                    Ok(d) => {
                        worst = worst.max(d);
                        checked += 1;
                    }
                    Err(Error::DegeneratePoint(_)) => continue,
                    Err(e) => panic!("gradient check failed: {e}"),
                }
            }
            let name = format!("{}{}", kind.method_name(), if borrow { "+borrow" } else { "" });
            out.push((name, worst));
        }
    }
    out
}

/// Largest |μ̂ᵢ(borrowing, ρ = η = 1e-8) − μ̂ᵢ(pooled, no borrowing)| per
/// replicate of scenario 1 with a = 1, r = 0, for the given method.
pub fn degeneracy_errors(replicates: usize, seed: u64, semap: bool) -> Vec<f64> {
    use dosecurve_core::harness::{replicate_data, AnalysisSettings, MethodSpec, ScenarioConfig};
    use dosecurve_core::posterior::Posterior;
    use dosecurve_core::shapes::{standard_shape, ShapeFamily};
    use dosecurve_core::solver::map_fit_posterior;
    use dosecurve_core::trials::{Scenario, TrialDesign, TrueCurve};
    use dosecurve_core::transform::ModelKind;
    use dosecurve_core::SolverOptions;

    let method = if semap { MethodSpec::semap(true) } else { MethodSpec { borrow: true, ..MethodSpec::limap() } };
    let mut analysis = AnalysisSettings::default();
    analysis.priors.borrow.rho = 1e-8;
    analysis.priors.borrow.eta = 1e-8;
    let config = ScenarioConfig {
        scenario: Scenario::S1,
        curve: TrueCurve::Shape(standard_shape(ShapeFamily::Emax2)),
        a: 1.0,
        r: 0.0,
        replicates,
        master_seed: seed,
        methods: vec![method],
        design: TrialDesign::default(),
        analysis: analysis.clone(),
    };
    let borrow_spec = analysis.objective(&method, &config.design, Scenario::S1).expect("spec");
    let pooled_spec = analysis.objective(&MethodSpec { borrow: false, ..method }, &config.design, Scenario::S4).expect("spec");
    assert_eq!(borrow_spec.grid, pooled_spec.grid);
    assert_eq!(method.kind == ModelKind::SigmoidEmax, semap);
    let opts = SolverOptions { tol: 1e-9, max_iter: 3000, restarts: 10, ..SolverOptions::default() };
    (0..replicates)
        .map(|i| {
            let (current, historical) = replicate_data(&config, i).expect("data");
            let historical = historical.expect("scenario 1 borrows");
            let pooled_responses = current
                .responses()
                .iter()
                .zip(historical.responses())
                .map(|(c, h)| c.iter().chain(h).copied().collect())
                .collect();
            let pooled = TrialDataset::new(TrialKind::Current, current.sigma(), current.doses().to_vec(), pooled_responses).expect("pooled");
            let borrowed = map_fit_posterior(&Posterior::new(borrow_spec.clone(), &current, Some(&historical)).expect("posterior"), &opts).expect("fit");
            let plain = map_fit_posterior(&Posterior::new(pooled_spec.clone(), &pooled, None).expect("posterior"), &opts).expect("fit");
            borrowed.mu_hat.iter().zip(&plain.mu_hat).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .collect()
}

/// Spread of `borrowing objective − pooled objective` over random points with
/// a = 1, r = 0 on scenario-1 data; zero when the two differ by a constant.
pub fn degeneracy_offset_spread(points: usize, seed: u64, semap: bool) -> f64 {
    use dosecurve_core::harness::{replicate_data, AnalysisSettings, MethodSpec, ScenarioConfig};
    use dosecurve_core::posterior::{Heterogeneity, LatentPoint, Posterior};
    use dosecurve_core::shapes::{standard_shape, ShapeFamily};
    use dosecurve_core::transform::EmaxParams;
    use dosecurve_core::trials::{Scenario, TrialDesign, TrueCurve};
    use rand::SeedableRng;

    let method = if semap { MethodSpec::semap(true) } else { MethodSpec { borrow: true, ..MethodSpec::limap() } };
    let mut analysis = AnalysisSettings::default();
    analysis.priors.borrow.rho = 1e-8;
    analysis.priors.borrow.eta = 1e-8;
    let config = ScenarioConfig {
        scenario: Scenario::S1,
        curve: TrueCurve::Shape(standard_shape(ShapeFamily::Emax2)),
        a: 1.0,
        r: 0.0,
        replicates: 1,
        master_seed: seed,
        methods: vec![method],
        design: TrialDesign::default(),
        analysis: analysis.clone(),
    };
    let (current, historical) = replicate_data(&config, 0).expect("data");
    let historical = historical.expect("scenario 1 borrows");
    let pooled_responses = current.responses().iter().zip(historical.responses()).map(|(c, h)| c.iter().chain(h).copied().collect()).collect();
    let pooled = TrialDataset::new(TrialKind::Current, current.sigma(), current.doses().to_vec(), pooled_responses).expect("pooled");
    let borrowed = Posterior::new(analysis.objective(&method, &config.design, Scenario::S1).expect("spec"), &current, Some(&historical)).expect("posterior");
    let plain = Posterior::new(analysis.objective(&MethodSpec { borrow: false, ..method }, &config.design, Scenario::S4).expect("spec"), &pooled, None).expect("posterior");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let offsets: Vec<f64> = (0..points)
        .map(|_| {
            let theta = semap.then(|| EmaxParams { e0: 0.0, emax: rng.random_range(0.2..1.5), ed50: rng.random_range(0.05..0.95), hill: rng.random_range(0.5..5.0) });
            let mu_hi = theta.map_or(0.98, |t: EmaxParams<f64>| (0.95 * t.emax).min(0.98));
            let mut p = LatentPoint {
                mu: (0..5).map(|_| rng.random_range(0.02..mu_hi)).collect(),
                gamma: rng.random_range(0.05..5.0),
                theta,
                heterogeneity: None,
            };
            let base = plain.value(&p).expect("value");
            p.heterogeneity = Some(Heterogeneity { a: 1.0, r: 0.0 });
            borrowed.value(&p).expect("value") - base
        })
        .collect();
    let lo = offsets.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = offsets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

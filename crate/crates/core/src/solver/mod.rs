//! MAP estimation: multi-start quasi-Newton in unconstrained coordinates,
//! an exhaustive grid oracle for small instances and a gradient checker.

pub mod gradcheck;
pub mod lbfgs;
pub mod oracle;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{Heterogeneity, LatentPoint, ObjectiveSpec, Posterior, TrialDataset};
use crate::scalar::Scalar;
use crate::seeding;
use crate::transform::EmaxParams;

pub use gradcheck::{check_gradient, gradient_check, Differentiable};
pub use oracle::{grid_search_oracle, oracle_cell_bound, Axis, OracleGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions<T> {
    pub restarts: usize,
    pub max_iter: usize,
    /// Gradient max-norm at which a run counts as converged.
    pub tol: T,
    pub seed: u64,
    /// L-BFGS history length.
    pub memory: usize,
    /// SD of the perturbation applied to every unconstrained coordinate of
    /// the base start for restarts after the first.
    pub perturbation: T,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        SolverOptions {
            restarts: 5,
            max_iter: 500,
            tol: T::lit(1e-6),
            seed: 0,
            memory: 10,
            perturbation: T::lit(0.5),
        }
    }
}

impl<T: Scalar> SolverOptions<T> {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidOptions("restarts must be at least 1".into()));
        }
        if self.max_iter == 0 || self.memory == 0 {
            return Err(Error::InvalidOptions("max_iter and memory must be positive".into()));
        }
        if !(self.tol > T::zero()) || !(self.perturbation >= T::zero()) {
            return Err(Error::InvalidOptions("tol must be positive and perturbation non-negative".into()));
        }
        Ok(())
    }
}

/// Result of a MAP fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapFit<T> {
    pub doses: Vec<T>,
    pub mu_hat: Vec<T>,
    pub gamma_hat: T,
    pub theta_hat: Option<EmaxParams<T>>,
    pub heterogeneity_hat: Option<Heterogeneity<T>>,
    /// Log posterior at the returned point.
    pub objective: T,
    /// Whether the winning run met the gradient tolerance.
    pub converged: bool,
    pub n_restarts_used: usize,
    /// Iterations of the winning run.
    pub iterations: usize,
    /// Index of the winning restart.
    pub best_restart: usize,
}

impl<T: Scalar> MapFit<T> {
    /// Assembles a fit from a point, e.g. for externally computed estimates.
    pub fn from_point(doses: Vec<T>, point: LatentPoint<T>, objective: T) -> Self {
        MapFit {
            doses,
            mu_hat: point.mu,
            gamma_hat: point.gamma,
            theta_hat: point.theta,
            heterogeneity_hat: point.heterogeneity,
            objective,
            converged: true,
            n_restarts_used: 0,
            iterations: 0,
            best_restart: 0,
        }
    }

    pub fn point(&self) -> LatentPoint<T> {
        LatentPoint {
            mu: self.mu_hat.clone(),
            gamma: self.gamma_hat,
            theta: self.theta_hat,
            heterogeneity: self.heterogeneity_hat,
        }
    }
}

/// Unconstrained start vectors: the prior-consistent base start followed by
/// deterministic perturbations of it.
pub fn start_points<T: Scalar>(posterior: &Posterior<T>, options: &SolverOptions<T>) -> Result<Vec<Vec<T>>> {
    let base = posterior.encode(&posterior.initial_point())?;
    Ok((0..options.restarts)
        .map(|k| {
            if k == 0 {
                return base.clone();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix(options.seed, k as u64, seeding::Stream::Restart));
            base.iter()
                .map(|v| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *v + options.perturbation * T::lit(e)
                })
                .collect()
        })
        .collect())
}

/// Maximizes the log posterior bound in `posterior`.
pub fn map_fit_posterior<T: Scalar>(posterior: &Posterior<T>, options: &SolverOptions<T>) -> Result<MapFit<T>> {
    options.validate()?;
    let lopts = lbfgs::LbfgsOptions {
        memory: options.memory,
        max_iter: options.max_iter,
        tol: options.tol,
    };
    let mut best: Option<(usize, lbfgs::LbfgsResult<T>)> = None;
    for (k, u0) in start_points(posterior, options)?.into_iter().enumerate() {
        let run = lbfgs::minimize(|u, g| posterior.neg_value_grad(u, g), &u0, &lopts);
        if !run.value.is_finite() {
            continue;
        }
        // strict improvement only, so ties keep the lowest restart index
        if best.as_ref().is_none_or(|(_, b)| run.value < b.value) {
            best = Some((k, run));
        }
    }
    let (k, run) = best.ok_or(Error::NoFeasiblePoint)?;
    let point = posterior.decode(&run.x);
    Ok(MapFit {
        doses: posterior.spec().grid.doses().to_vec(),
        objective: -run.value,
        mu_hat: point.mu,
        gamma_hat: point.gamma,
        theta_hat: point.theta,
        heterogeneity_hat: point.heterogeneity,
        converged: run.converged,
        n_restarts_used: options.restarts,
        iterations: run.iterations,
        best_restart: k,
    })
}

/// MAP fit of the objective defined by `spec` on the given trial(s).
pub fn map_fit<T: Scalar>(
    spec: &ObjectiveSpec<T>,
    current: &TrialDataset<T>,
    historical: Option<&TrialDataset<T>>,
    options: &SolverOptions<T>,
) -> Result<MapFit<T>> {
    let posterior = Posterior::new(spec.clone(), current, historical)?;
    map_fit_posterior(&posterior, options)
}

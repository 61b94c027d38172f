//! Central finite-difference gradient checks.

use crate::error::{Error, Result};
use crate::posterior::{LatentPoint, Posterior};
use crate::transform::DefaultModel;
use crate::scalar::Scalar;

/// A function with an analytic gradient.
pub trait Differentiable<T> {
    fn dim(&self) -> usize;
    /// Value at `x`; writes the gradient into `grad`.
    fn value_grad(&self, x: &[T], grad: &mut [T]) -> T;
}

impl<T: Scalar> Differentiable<T> for Posterior<T> {
    fn dim(&self) -> usize {
        Posterior::dim(self)
    }

    fn value_grad(&self, x: &[T], grad: &mut [T]) -> T {
        self.neg_value_grad(x, grad)
    }
}

/// Max over coordinates of `|analytic − fd| / max(|analytic|, |fd|, 1)`.
pub fn check_gradient<T: Scalar, F: Differentiable<T> + ?Sized>(f: &F, x: &[T], h: T) -> T {
    let mut analytic = vec![T::zero(); f.dim()];
    f.value_grad(x, &mut analytic);
    let mut scratch = vec![T::zero(); f.dim()];
    let mut probe = x.to_vec();
    let mut worst = T::zero();
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let up = f.value_grad(&probe, &mut scratch);
        probe[k] = x[k] - h;
        let down = f.value_grad(&probe, &mut scratch);
        probe[k] = x[k];
        let fd = (up - down) / (h + h);
        let denom = analytic[k].abs().max(fd.abs()).max(T::one());
        let rel = (analytic[k] - fd).abs() / denom;
        if rel > worst || rel.is_nan() {
            worst = rel;
        }
    }
    worst
}

/// Gradient check of the optimizer's objective at `point`, with step `h` in
/// unconstrained coordinates.
///
/// Fails with a degenerate-point error if any μᵢ, ED₅₀ or `a` lies within
/// `10h` of a support bound or a clamp boundary of the inverse transform.
pub fn gradient_check<T: Scalar>(posterior: &Posterior<T>, point: &LatentPoint<T>, h: T) -> Result<T> {
    let margin = T::lit(10.0) * h;
    let spec = posterior.spec();
    let [lo, hi] = spec.priors.mu_support;
    let mut boundaries = vec![lo, hi];
    let clamp = point
        .theta
        .filter(|_| spec.kind == crate::transform::ModelKind::SigmoidEmax)
        .and_then(|theta| DefaultModel::sigmoid_emax(theta, spec.clamp_epsilon).ok())
        .and_then(|m| m.clamp_range());
    if let Some((c_lo, c_hi)) = clamp {
        boundaries.push(c_lo);
        boundaries.push(c_hi);
    }
    for (i, m) in point.mu.iter().enumerate() {
        if posterior.layout().placebo_fixed && i == 0 {
            continue;
        }
        if boundaries.iter().any(|b| (*m - *b).abs() <= margin) {
            return Err(Error::DegeneratePoint(format!("mu[{i}] = {m} is within {margin} of a boundary")));
        }
    }
    if let Some(theta) = point.theta {
        if theta.ed50 <= margin || theta.ed50 >= T::one() - margin {
            return Err(Error::DegeneratePoint("ED50 too close to its bounds".into()));
        }
    }
    if let Some(het) = point.heterogeneity {
        let b = spec.priors.borrow.b;
        if (het.a - b).abs() <= margin || (het.a - T::one() / b).abs() <= margin {
            return Err(Error::DegeneratePoint("a too close to its truncation bounds".into()));
        }
    }
    let u = posterior.encode(point)?;
    Ok(check_gradient(posterior, &u, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::DoseGrid;
    use crate::posterior::{ObjectiveSpec, PriorSet, TrialDataset, TrialKind};
    use crate::transform::{EmaxParams, ModelKind};

    struct Quadratic;

    impl Differentiable<f64> for Quadratic {
        fn dim(&self) -> usize {
            3
        }

        fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            let w = [1.0, 3.0, 0.5];
            let mut v = x[0] * x[1];
            for i in 0..3 {
                v += w[i] * x[i] * x[i];
                grad[i] = 2.0 * w[i] * x[i];
            }
            grad[0] += x[1];
            grad[1] += x[0];
            v
        }
    }

    fn posterior(kind: ModelKind) -> Posterior<f64> {
        let grid = DoseGrid::new(vec![0.0, 0.15, 0.5, 0.8, 1.0]).unwrap();
        let data = TrialDataset::new(
            TrialKind::Current,
            1.0,
            grid.doses().to_vec(),
            vec![vec![0.1, -0.2], vec![0.3], vec![0.4, 0.2], vec![0.5], vec![0.45]],
        )
        .unwrap();
        Posterior::new(ObjectiveSpec::new(grid, kind, PriorSet::standard(0.5)), &data, None).unwrap()
    }

    #[test]
    fn quadratic_is_exact() {
        assert!(check_gradient(&Quadratic, &[0.3, -1.2, 2.0], 1e-6) <= 1e-8);
    }

    #[test]
    fn identity_interior_point() {
        let p = posterior(ModelKind::Identity);
        let point = LatentPoint { mu: vec![0.1, 0.2, 0.35, 0.4, 0.6], gamma: 0.7, theta: None, heterogeneity: None };
        assert!(gradient_check(&p, &point, 1e-6).unwrap() <= 1e-4);
    }

    #[test]
    fn clamp_boundary_is_degenerate() {
        let p = posterior(ModelKind::SigmoidEmax);
        let theta = EmaxParams::new(0.0, 0.5, 0.5, 2.0);
        let edge = 0.5 * (1.0 - 1e-6);
        let point = LatentPoint { mu: vec![0.1, 0.2, edge, 0.4, 0.45], gamma: 0.7, theta: Some(theta), heterogeneity: None };
        assert!(matches!(gradient_check(&p, &point, 1e-6), Err(Error::DegeneratePoint(_))));
    }
}

//! Exhaustive tensor-grid maximization, used to verify the optimizer on
//! small instances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{Heterogeneity, LatentPoint, Posterior};
use crate::scalar::Scalar;
use crate::transform::EmaxParams;

use super::MapFit;

/// Hard cap on the number of grid points.
pub const MAX_ORACLE_POINTS: u128 = 10_000_000;

/// Evenly spaced values over `[lo, hi]`, geometric when `log` is set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis<T> {
    pub lo: T,
    pub hi: T,
    pub points: usize,
    #[serde(default)]
    pub log: bool,
}

impl<T: Scalar> Axis<T> {
    pub fn linear(lo: T, hi: T, points: usize) -> Self {
        Axis { lo, hi, points, log: false }
    }

    pub fn geometric(lo: T, hi: T, points: usize) -> Self {
        Axis { lo, hi, points, log: true }
    }

    /// A single fixed value.
    pub fn fixed(v: T) -> Self {
        Axis { lo: v, hi: v, points: 1, log: false }
    }

    pub fn values(&self) -> Vec<T> {
        if self.points <= 1 {
            return vec![self.lo];
        }
        let n = T::from_usize(self.points - 1).expect("count fits");
        (0..self.points)
            .map(|k| {
                let t = T::from_usize(k).expect("count fits") / n;
                if self.log {
                    (self.lo.ln() + t * (self.hi.ln() - self.lo.ln())).exp()
                } else {
                    self.lo + t * (self.hi - self.lo)
                }
            })
            .collect()
    }

    /// Largest gap between neighbouring values.
    pub fn cell(&self) -> T {
        let v = self.values();
        v.windows(2).map(|w| w[1] - w[0]).fold(T::zero(), T::max)
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = self.points >= 1
            && self.lo.is_finite()
            && self.hi.is_finite()
            && self.lo <= self.hi
            && (!self.log || self.lo > T::zero());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidOptions(format!("oracle axis {name} is malformed")))
        }
    }
}

/// Axes of the oracle grid, one per free variable of the objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleGrid<T> {
    /// One axis per free μᵢ (μ₀ is skipped when the placebo is fixed).
    pub mu: Vec<Axis<T>>,
    pub gamma: Axis<T>,
    pub emax: Option<Axis<T>>,
    pub ed50: Option<Axis<T>>,
    pub hill: Option<Axis<T>>,
    pub e0: Option<Axis<T>>,
    pub a: Option<Axis<T>>,
    pub r: Option<Axis<T>>,
}

impl<T: Scalar> OracleGrid<T> {
    /// Same axis for every μᵢ; no θ or borrowing axes.
    pub fn uniform(free_mu: usize, mu: Axis<T>, gamma: Axis<T>) -> Self {
        OracleGrid {
            mu: vec![mu; free_mu],
            gamma,
            emax: None,
            ed50: None,
            hill: None,
            e0: None,
            a: None,
            r: None,
        }
    }

    fn axes(&self, posterior: &Posterior<T>) -> Result<Vec<(&'static str, Axis<T>)>> {
        let l = posterior.layout();
        if self.mu.len() != l.mu_free() {
            return Err(Error::DimensionMismatch { expected: l.mu_free(), got: self.mu.len() });
        }
        let mut axes: Vec<(&'static str, Axis<T>)> = self.mu.iter().map(|a| ("mu", *a)).collect();
        axes.push(("gamma", self.gamma));
        let need = |name: &'static str, a: Option<Axis<T>>| {
            a.map(|a| (name, a))
                .ok_or_else(|| Error::InvalidOptions(format!("oracle grid needs a {name} axis")))
        };
        if l.theta {
            axes.push(need("emax", self.emax)?);
            axes.push(need("ed50", self.ed50)?);
            axes.push(need("hill", self.hill)?);
            if l.e0_free {
                axes.push(need("e0", self.e0)?);
            }
        }
        if l.borrow {
            axes.push(need("a", self.a)?);
            axes.push(need("r", self.r)?);
        }
        for (name, a) in &axes {
            a.validate(name)?;
        }
        Ok(axes)
    }

    pub fn size(&self, posterior: &Posterior<T>) -> Result<u128> {
        Ok(self.axes(posterior)?.iter().map(|(_, a)| a.points as u128).product())
    }
}

fn assemble<T: Scalar>(posterior: &Posterior<T>, coords: &[T]) -> LatentPoint<T> {
    let l = posterior.layout();
    let mut mu = Vec::with_capacity(l.n_mu);
    if l.placebo_fixed {
        mu.push(T::zero());
    }
    mu.extend_from_slice(&coords[..l.mu_free()]);
    let mut k = l.mu_free();
    let gamma = coords[k];
    k += 1;
    let theta = l.theta.then(|| {
        let e0 = if l.e0_free {
            coords[k + 3]
        } else {
            match posterior.spec().priors.theta.e0 {
                crate::posterior::E0Prior::Fixed { value } => value,
                crate::posterior::E0Prior::Normal { mean, .. } => mean,
            }
        };
        let t = EmaxParams { e0, emax: coords[k], ed50: coords[k + 1], hill: coords[k + 2] };
        k += 3 + usize::from(l.e0_free);
        t
    });
    let heterogeneity = l.borrow.then(|| Heterogeneity { a: coords[k], r: coords[k + 1] });
    LatentPoint { mu, gamma, theta, heterogeneity }
}

fn value_or_neg_inf<T: Scalar>(posterior: &Posterior<T>, point: &LatentPoint<T>) -> T {
    match posterior.value(point) {
        Ok(v) if !v.is_nan() => v,
        _ => T::neg_infinity(),
    }
}

/// Evaluates the log posterior at every point of the tensor grid and returns
/// the best one; ties go to the first point in lexicographic axis order.
pub fn grid_search_oracle<T: Scalar>(posterior: &Posterior<T>, grid: &OracleGrid<T>) -> Result<MapFit<T>> {
    let size = grid.size(posterior)?;
    if size > MAX_ORACLE_POINTS {
        return Err(Error::GridTooLarge { points: size, limit: MAX_ORACLE_POINTS });
    }
    let values: Vec<Vec<T>> = grid.axes(posterior)?.iter().map(|(_, a)| a.values()).collect();
    let dims: Vec<usize> = values.iter().map(Vec::len).collect();
    let mut idx = vec![0usize; dims.len()];
    let mut coords: Vec<T> = values.iter().map(|v| v[0]).collect();
    let mut best: Option<(T, Vec<T>)> = None;
    loop {
        let point = assemble(posterior, &coords);
        let v = value_or_neg_inf(posterior, &point);
        if v > T::neg_infinity() && best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, coords.clone()));
        }
        // odometer increment, last axis fastest
        let mut k = dims.len();
        loop {
            if k == 0 {
                let (objective, c) = best.ok_or(Error::NoFeasiblePoint)?;
                let point = assemble(posterior, &c);
                let doses = posterior.spec().grid.doses().to_vec();
                return Ok(MapFit::from_point(doses, point, objective));
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < dims[k] {
                coords[k] = values[k][idx[k]];
                break;
            }
            idx[k] = 0;
            coords[k] = values[k][0];
        }
    }
}

/// Largest change of the objective between the oracle's argmax and any of its
/// axis neighbours on the grid; bounds how far the grid optimum can sit below
/// a continuous optimum inside the neighbouring cells.
pub fn oracle_cell_bound<T: Scalar>(posterior: &Posterior<T>, grid: &OracleGrid<T>, fit: &MapFit<T>) -> Result<T> {
    let axes = grid.axes(posterior)?;
    let values: Vec<Vec<T>> = axes.iter().map(|(_, a)| a.values()).collect();
    let point = fit.point();
    let l = posterior.layout();
    let mut coords: Vec<T> = point.mu[usize::from(l.placebo_fixed)..].to_vec();
    coords.push(point.gamma);
    if let Some(t) = point.theta.filter(|_| l.theta) {
        coords.extend([t.emax, t.ed50, t.hill]);
        if l.e0_free {
            coords.push(t.e0);
        }
    }
    if let Some(h) = point.heterogeneity.filter(|_| l.borrow) {
        coords.extend([h.a, h.r]);
    }
    let snap = |vals: &[T], v: T| {
        vals.iter()
            .enumerate()
            .min_by(|a, b| (*a.1 - v).abs().partial_cmp(&(*b.1 - v).abs()).expect("finite"))
            .map(|(i, _)| i)
            .expect("non-empty axis")
    };
    let idx: Vec<usize> = values.iter().zip(&coords).map(|(vals, v)| snap(vals, *v)).collect();
    let base = value_or_neg_inf(posterior, &assemble(posterior, &coords));
    let mut bound = T::zero();
    for k in 0..idx.len() {
        for step in [-1isize, 1] {
            let j = idx[k] as isize + step;
            if j < 0 || j as usize >= values[k].len() {
                continue;
            }
            let mut c = coords.clone();
            c[k] = values[k][j as usize];
            let v = value_or_neg_inf(posterior, &assemble(posterior, &c));
            if v.is_finite() {
                bound = bound.max((v - base).abs());
            }
        }
    }
    Ok(bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::DoseGrid;
    use crate::posterior::{ObjectiveSpec, PriorSet, TrialDataset, TrialKind};
    use crate::transform::ModelKind;

    fn posterior(doses: Vec<f64>, responses: Vec<Vec<f64>>) -> Posterior<f64> {
        let grid = DoseGrid::new(doses.clone()).unwrap();
        let data = TrialDataset::new(TrialKind::Current, 1.0, doses, responses).unwrap();
        Posterior::new(ObjectiveSpec::new(grid, ModelKind::Identity, PriorSet::standard(3.0)), &data, None).unwrap()
    }

    #[test]
    fn single_free_mu_matches_closed_form() {
        let p = posterior(vec![0.0, 1.0], vec![vec![0.37], vec![0.5]]);
        let mut grid = OracleGrid::uniform(2, Axis::linear(0.0, 1.0, 201), Axis::fixed(1.0));
        grid.mu[1] = Axis::fixed(0.5);
        let fit = grid_search_oracle(&p, &grid).unwrap();
        assert!((fit.mu_hat[0] - 0.37).abs() <= grid.mu[0].cell());
    }

    #[test]
    fn infeasible_grid_errors() {
        let p = posterior(vec![0.0, 1.0], vec![vec![0.3], vec![0.5]]);
        let grid = OracleGrid::uniform(2, Axis::linear(1.1, 1.5, 5), Axis::fixed(1.0));
        assert!(matches!(grid_search_oracle(&p, &grid), Err(Error::NoFeasiblePoint)));
    }

    #[test]
    fn too_large_grid_errors() {
        let p = posterior(vec![0.0, 0.5, 1.0], vec![vec![0.3], vec![0.4], vec![0.5]]);
        let grid = OracleGrid::uniform(3, Axis::linear(0.0, 1.0, 300), Axis::geometric(0.01, 10.0, 300));
        assert!(matches!(grid_search_oracle(&p, &grid), Err(Error::GridTooLarge { .. })));
    }

    #[test]
    fn axis_values() {
        assert_eq!(Axis::linear(0.0, 1.0, 3).values(), vec![0.0, 0.5, 1.0]);
        let g: Vec<f64> = Axis::geometric(0.1, 10.0, 3).values();
        assert!((g[1] - 1.0).abs() < 1e-12);
        assert_eq!(Axis::fixed(2.0).values(), vec![2.0]);
    }
}

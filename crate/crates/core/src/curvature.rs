//! Discretized L²-total curvature of a transformed mean vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ordered dose levels `x₀ < … < x_M` on [0, 1] with their integration weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<T>", into = "Vec<T>", bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct DoseGrid<T> {
    doses: Vec<T>,
    weights: Vec<T>,
}

impl<T: Scalar> DoseGrid<T> {
    pub fn new(doses: Vec<T>) -> Result<Self> {
        if doses.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least two doses, got {}",
                doses.len()
            )));
        }
        if let Some(bad) = doses.iter().find(|d| !(**d >= T::zero() && **d <= T::one())) {
            return Err(Error::InvalidGrid(format!("dose {bad} outside [0, 1]")));
        }
        if doses.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidGrid("doses must be strictly increasing".into()));
        }
        let weights = integration_weights(&doses);
        Ok(DoseGrid { doses, weights })
    }

    pub fn doses(&self) -> &[T] {
        &self.doses
    }

    /// `M`, the index of the highest dose.
    pub fn m(&self) -> usize {
        self.doses.len() - 1
    }

    pub fn len(&self) -> usize {
        self.doses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doses.is_empty()
    }

    /// `Δx₁ … Δx_{M−1}`; entry `k` belongs to interior point `k + 1`.
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Index of a dose on the grid, matched within 1e-9.
    pub fn index_of(&self, dose: T) -> Option<usize> {
        let tol = T::lit(1e-9);
        self.doses.iter().position(|d| (*d - dose).abs() <= tol)
    }
}

impl<T: Scalar> TryFrom<Vec<T>> for DoseGrid<T> {
    type Error = Error;

    fn try_from(doses: Vec<T>) -> Result<Self> {
        DoseGrid::new(doses)
    }
}

impl<T> From<DoseGrid<T>> for Vec<T> {
    fn from(grid: DoseGrid<T>) -> Vec<T> {
        grid.doses
    }
}

fn integration_weights<T: Scalar>(x: &[T]) -> Vec<T> {
    let m = x.len() - 1;
    let half = T::lit(0.5);
    match m {
        0 | 1 => Vec::new(),
        // The two boundary rules disagree with a single interior point; take
        // the whole span.
        2 => vec![x[2] - x[0]],
        _ => (1..m)
            .map(|i| {
                if i == 1 {
                    (x[2] + x[1]) * half - x[0]
                } else if i == m - 1 {
                    x[m] - (x[m - 1] + x[m - 2]) * half
                } else {
                    (x[i + 1] - x[i - 1]) * half
                }
            })
            .collect(),
    }
}

/// Central second difference of `z` at interior grid point `i`.
pub fn second_difference<T: Scalar>(z: &[T], grid: &DoseGrid<T>, i: usize) -> Result<T> {
    check_len(z, grid)?;
    let m = grid.m();
    if i == 0 || i >= m {
        return Err(Error::NotInterior { index: i, m });
    }
    Ok(stencil(z, grid.doses(), i))
}

#[inline]
fn stencil<T: Scalar>(z: &[T], x: &[T], i: usize) -> T {
    let span = x[i + 1] - x[i - 1];
    let right = (z[i + 1] - z[i]) / ((x[i + 1] - x[i]) * span);
    let left = (z[i] - z[i - 1]) / ((x[i] - x[i - 1]) * span);
    T::lit(2.0) * (right - left)
}

fn check_len<T: Scalar>(z: &[T], grid: &DoseGrid<T>) -> Result<()> {
    if z.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: z.len(),
        });
    }
    Ok(())
}

/// `S = (Σᵢ D²ᵢ Δxᵢ)^{1/2}` over the interior points.
pub fn total_curvature<T: Scalar>(z: &[T], grid: &DoseGrid<T>) -> Result<T> {
    check_len(z, grid)?;
    if let Some(bad) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!("non-finite transformed mean {bad}")));
    }
    Ok(curvature_squared(z, grid).sqrt())
}

/// `S²` without the square root; lengths must already match.
pub(crate) fn curvature_squared<T: Scalar>(z: &[T], grid: &DoseGrid<T>) -> T {
    let x = grid.doses();
    grid.weights()
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let d = stencil(z, x, k + 1);
            d * d * *w
        })
        .sum()
}

/// `S²` and its gradient with respect to `z`, accumulated into `grad`.
pub(crate) fn curvature_squared_grad<T: Scalar>(z: &[T], grid: &DoseGrid<T>, grad: &mut [T]) -> T {
    let x = grid.doses();
    let two = T::lit(2.0);
    grad.iter_mut().for_each(|g| *g = T::zero());
    let mut total = T::zero();
    for (k, w) in grid.weights().iter().enumerate() {
        let i = k + 1;
        let d = stencil(z, x, i);
        total = total + d * d * *w;
        let span = x[i + 1] - x[i - 1];
        let c_right = two / ((x[i + 1] - x[i]) * span);
        let c_left = two / ((x[i] - x[i - 1]) * span);
        let scale = two * d * *w;
        grad[i + 1] = grad[i + 1] + scale * c_right;
        grad[i - 1] = grad[i - 1] + scale * c_left;
        grad[i] = grad[i] - scale * (c_right + c_left);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::{DefaultModel, EmaxParams};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn uniform5() -> DoseGrid<f64> {
        DoseGrid::new(vec![0.0, 0.25, 0.5, 0.75, 1.0]).unwrap()
    }

    fn study_grid() -> DoseGrid<f64> {
        DoseGrid::new(vec![0.0, 0.15, 0.5, 0.8, 1.0]).unwrap()
    }

    #[test]
    fn weights_follow_boundary_rules() {
        assert_eq!(uniform5().weights(), &[0.375, 0.25, 0.375]);
        let g = study_grid();
        let w = g.weights();
        assert_abs_diff_eq!(w[0], (0.5 + 0.15) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], (0.8 - 0.15) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[2], 1.0 - (0.8 + 0.5) / 2.0, epsilon = 1e-15);
        assert!(w.iter().all(|v| *v > 0.0));
        let g3 = DoseGrid::new(vec![0.0, 0.3, 1.0]).unwrap();
        assert_eq!(g3.weights(), &[1.0]);
        let g4 = DoseGrid::new(vec![0.0, 0.2, 0.6, 1.0]).unwrap();
        assert_abs_diff_eq!(g4.weights()[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(g4.weights()[1], 0.6, epsilon = 1e-15);
        assert!(DoseGrid::new(vec![0.0, 1.0]).unwrap().weights().is_empty());
    }

    #[test]
    fn grid_validation() {
        assert!(DoseGrid::new(vec![0.0]).is_err());
        assert!(DoseGrid::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(DoseGrid::new(vec![0.0, 0.7, 0.5]).is_err());
        assert!(DoseGrid::new(vec![0.0, 1.5]).is_err());
    }

    #[test]
    fn second_difference_examples() {
        let g = uniform5();
        let affine: Vec<f64> = g.doses().iter().map(|x| 0.3 - 2.0 * x).collect();
        for i in 1..4 {
            assert_abs_diff_eq!(second_difference(&affine, &g, i).unwrap(), 0.0, epsilon = 1e-12);
        }
        let sq: Vec<f64> = g.doses().iter().map(|x| x * x).collect();
        assert_abs_diff_eq!(second_difference(&sq, &g, 2).unwrap(), 2.0, epsilon = 1e-12);
        // (z₃ − 2z₂ + z₁) / h² with h = 0.25
        let spike = [0.0, 0.0, 1.0, 0.0, 0.0];
        assert_abs_diff_eq!(second_difference(&spike, &g, 2).unwrap(), -32.0, epsilon = 1e-12);
        assert!(matches!(second_difference(&spike, &g, 0), Err(Error::NotInterior { .. })));
        assert!(matches!(second_difference(&spike, &g, 4), Err(Error::NotInterior { .. })));
    }

    #[test]
    fn total_curvature_examples() {
        let g = study_grid();
        let affine: Vec<f64> = g.doses().iter().map(|x| 1.0 + 0.7 * x).collect();
        assert!(total_curvature(&affine, &g).unwrap().abs() < 1e-10);
        let u = uniform5();
        let sq: Vec<f64> = u.doses().iter().map(|x| x * x).collect();
        assert_abs_diff_eq!(total_curvature(&sq, &u).unwrap(), 2.0, epsilon = 1e-12);
        assert!(matches!(
            total_curvature(&[0.0, 1.0], &u),
            Err(Error::DimensionMismatch { expected: 5, got: 2 })
        ));
        assert!(total_curvature(&[0.0, 1.0, f64::NAN, 0.0, 0.0], &u).is_err());
    }

    #[test]
    fn sigmoid_self_consistency() {
        let g = study_grid();
        let m = DefaultModel::sigmoid_emax(EmaxParams::new(0.0, 0.5, 0.3, 2.5), 1e-6).unwrap();
        let z: Vec<f64> = g.doses().iter().map(|&x| m.inverse(m.forward(x).unwrap())).collect();
        assert!(total_curvature(&z, &g).unwrap() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = study_grid();
        let z = [0.1, 0.4, 0.2, 0.9, 0.7];
        let mut grad = [0.0; 5];
        let s2 = curvature_squared_grad(&z, &g, &mut grad);
        assert_abs_diff_eq!(s2, curvature_squared(&z, &g), epsilon = 1e-12);
        for k in 0..5 {
            let h = 1e-6;
            let mut zp = z;
            let mut zm = z;
            zp[k] += h;
            zm[k] -= h;
            let fd = (curvature_squared(&zp, &g) - curvature_squared(&zm, &g)) / (2.0 * h);
            assert_abs_diff_eq!(grad[k], fd, epsilon = 1e-4 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn converges_for_smooth_function() {
        // ∫₀¹ (−4π² sin 2πx)² dx = 8π⁴
        let exact = (8.0 * std::f64::consts::PI.powi(4)).sqrt();
        let errs: Vec<f64> = [5usize, 9, 17, 33]
            .iter()
            .map(|&n| {
                let g = DoseGrid::new((0..n).map(|k| k as f64 / (n - 1) as f64).collect()).unwrap();
                let z: Vec<f64> = g.doses().iter().map(|x| (2.0 * std::f64::consts::PI * x).sin()).collect();
                (total_curvature(&z, &g).unwrap() - exact).abs()
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
        assert!(errs[3] / exact < 0.05, "{errs:?}");
    }

    #[test]
    fn f32_grid() {
        let g = DoseGrid::new(vec![0.0f32, 0.25, 0.5, 0.75, 1.0]).unwrap();
        let sq: Vec<f32> = g.doses().iter().map(|x| x * x).collect();
        assert!((total_curvature(&sq, &g).unwrap() - 2.0).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn affine_invariance(z in prop::collection::vec(-5.0f64..5.0, 5), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let g = study_grid();
            let shifted: Vec<f64> = z.iter().zip(g.doses()).map(|(v, x)| v + a + b * x).collect();
            let s0 = total_curvature(&z, &g).unwrap();
            let s1 = total_curvature(&shifted, &g).unwrap();
            prop_assert!((s0 - s1).abs() <= 1e-9 * (1.0 + s0));
        }

        #[test]
        fn scale_equivariance(z in prop::collection::vec(-5.0f64..5.0, 5), c in -4.0f64..4.0) {
            let g = study_grid();
            let scaled: Vec<f64> = z.iter().map(|v| c * v).collect();
            let s0 = total_curvature(&z, &g).unwrap();
            let s1 = total_curvature(&scaled, &g).unwrap();
            prop_assert!((s1 - c.abs() * s0).abs() <= 1e-9 * (1.0 + s1));
        }

        #[test]
        fn sigmoid_inverse_of_forward_is_flat(
            emax in 0.1f64..1.5, ed50 in 0.05f64..1.0, hill in 0.5f64..5.0, e0 in -0.3f64..0.3,
        ) {
            let g = study_grid();
            let m = DefaultModel::sigmoid_emax(EmaxParams::new(e0, emax, ed50, hill), 1e-6).unwrap();
            let z: Vec<f64> = g.doses().iter().map(|&x| m.inverse(m.forward(x).unwrap())).collect();
            prop_assert!(total_curvature(&z, &g).unwrap() < 1e-8);
        }
    }
}

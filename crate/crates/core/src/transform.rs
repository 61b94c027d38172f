//! Default dose-response models and their inverses.
//!
//! The curvature penalty is applied to `φ⁻¹(μ)`, so the default model decides
//! which curves count as "straight". The identity gives LiMAP-curvature; the
//! sigmoid Emax model gives SEMAP-curvature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default relative clamp margin applied before inverting the sigmoid Emax model.
pub const DEFAULT_CLAMP_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Identity,
    SigmoidEmax,
}

impl ModelKind {
    pub fn method_name(self) -> &'static str {
        match self {
            ModelKind::Identity => "LiMAP",
            ModelKind::SigmoidEmax => "SEMAP",
        }
    }
}

/// Sigmoid Emax parameters θ = {E₀, E_max, ED₅₀, λ}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmaxParams<T> {
    pub e0: T,
    pub emax: T,
    pub ed50: T,
    pub hill: T,
}

impl<T: Scalar> EmaxParams<T> {
    pub fn new(e0: T, emax: T, ed50: T, hill: T) -> Self {
        EmaxParams { e0, emax, ed50, hill }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.e0.is_finite()
            && self.emax.is_finite()
            && self.ed50.is_finite()
            && self.hill.is_finite()
            && self.emax > T::zero()
            && self.ed50 > T::zero()
            && self.hill > T::zero();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidTheta(format!(
                "need E_max > 0, ED50 > 0, hill > 0 (got E0={}, E_max={}, ED50={}, hill={})",
                self.e0, self.emax, self.ed50, self.hill
            )))
        }
    }
}

/// Treatment of responses outside the clamp range of the sigmoid inverse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RangePolicy {
    /// Hold the response at the nearest end of the clamp range.
    #[default]
    Clamp,
    /// Continue linearly above the range with the slope at its upper end, and
    /// below `E₀` by odd reflection, `φ⁻¹(y) = −φ⁻¹(2E₀ − y)`. Strictly
    /// increasing and continuously differentiable away from `E₀`.
    Extend,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DefaultModel<T> {
    Identity,
    SigmoidEmax {
        theta: EmaxParams<T>,
        clamp_epsilon: T,
        #[serde(default)]
        range: RangePolicy,
    },
}

/// `φ⁻¹(y)` together with its partial derivatives.
///
/// `clamped` is set when `y` lies outside the clamp range. Under
/// [`RangePolicy::Clamp`] the derivatives with respect to `y`, `E₀` and
/// `E_max` are then zero, since the clamped value no longer depends on them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseWithPartials<T> {
    pub value: T,
    pub d_y: T,
    pub d_e0: T,
    pub d_emax: T,
    pub d_ed50: T,
    pub d_hill: T,
    pub clamped: bool,
}

impl<T: Scalar> DefaultModel<T> {
    pub fn identity() -> Self {
        DefaultModel::Identity
    }

    pub fn sigmoid_emax(theta: EmaxParams<T>, clamp_epsilon: T) -> Result<Self> {
        theta.validate()?;
        if !(clamp_epsilon > T::zero() && clamp_epsilon <= T::lit(0.01)) {
            return Err(Error::InvalidTheta(format!(
                "clamp epsilon {clamp_epsilon} outside (0, 0.01]"
            )));
        }
        Ok(DefaultModel::SigmoidEmax { theta, clamp_epsilon, range: RangePolicy::Clamp })
    }

    /// Same model with a different out-of-range treatment; no-op for the identity.
    pub fn with_range(self, policy: RangePolicy) -> Self {
        match self {
            DefaultModel::Identity => self,
            DefaultModel::SigmoidEmax { theta, clamp_epsilon, .. } => {
                DefaultModel::SigmoidEmax { theta, clamp_epsilon, range: policy }
            }
        }
    }

    pub fn range_policy(&self) -> Option<RangePolicy> {
        match self {
            DefaultModel::Identity => None,
            DefaultModel::SigmoidEmax { range, .. } => Some(*range),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            DefaultModel::Identity => ModelKind::Identity,
            DefaultModel::SigmoidEmax { .. } => ModelKind::SigmoidEmax,
        }
    }

    pub fn theta(&self) -> Option<&EmaxParams<T>> {
        match self {
            DefaultModel::Identity => None,
            DefaultModel::SigmoidEmax { theta, .. } => Some(theta),
        }
    }

    /// `φ(x)`.
    pub fn forward(&self, x: T) -> Result<T> {
        if !(x >= T::zero()) {
            return Err(Error::DoseOutOfRange(x.as_f64()));
        }
        Ok(match self {
            DefaultModel::Identity => x,
            DefaultModel::SigmoidEmax { theta, .. } => {
                let xh = x.powf(theta.hill);
                theta.e0 + theta.emax * xh / (xh + theta.ed50.powf(theta.hill))
            }
        })
    }

    /// Interval the response is clamped into before inversion.
    ///
    /// The inverse is finite at `E₀` (it is 0 there) and diverges at
    /// `E₀ + E_max`, so only the upper end carries the relative margin.
    pub fn clamp_range(&self) -> Option<(T, T)> {
        match self {
            DefaultModel::Identity => None,
            DefaultModel::SigmoidEmax { theta, clamp_epsilon, .. } => Some((
                theta.e0,
                theta.e0 + (T::one() - *clamp_epsilon) * theta.emax,
            )),
        }
    }

    /// `φ⁻¹(y)`; out-of-range `y` is handled according to the model's
    /// [`RangePolicy`].
    pub fn inverse(&self, y: T) -> T {
        match self {
            DefaultModel::Identity => y,
            DefaultModel::SigmoidEmax { range: RangePolicy::Extend, .. } => self.inverse_with_partials(y).value,
            DefaultModel::SigmoidEmax { theta, .. } => {
                let (lo, hi) = self.clamp_range().expect("sigmoid has a clamp range");
                let yc = y.max(lo).min(hi);
                let u = yc - theta.e0;
                let v = theta.emax - u;
                theta.ed50 * (u / v).powf(T::one() / theta.hill)
            }
        }
    }

    pub fn inverse_with_partials(&self, y: T) -> InverseWithPartials<T> {
        match self {
            DefaultModel::Identity => InverseWithPartials {
                value: y,
                d_y: T::one(),
                d_e0: T::zero(),
                d_emax: T::zero(),
                d_ed50: T::zero(),
                d_hill: T::zero(),
                clamped: false,
            },
            DefaultModel::SigmoidEmax { theta, clamp_epsilon, range: RangePolicy::Extend } => {
                let (lo, hi) = self.clamp_range().expect("sigmoid has a clamp range");
                if y < lo {
                    let p = self.inverse_with_partials(lo + lo - y);
                    return InverseWithPartials {
                        value: -p.value,
                        d_y: p.d_y,
                        d_e0: -(p.d_e0 + p.d_y + p.d_y),
                        d_emax: -p.d_emax,
                        d_ed50: -p.d_ed50,
                        d_hill: -p.d_hill,
                        clamped: true,
                    };
                }
                if y <= hi {
                    return self.with_range(RangePolicy::Clamp).inverse_with_partials(y);
                }
                // z = z_h + s_h (y − hi) with z_h = ED50 q^(1/λ), q = (1−ε)/ε,
                // s_h = z_h / (λ ε (1−ε) E_max)
                let eps = *clamp_epsilon;
                let inv_hill = T::one() / theta.hill;
                let log_q = ((T::one() - eps) / eps).ln();
                let z_h = theta.ed50 * (log_q * inv_hill).exp();
                let s_h = z_h * inv_hill / (eps * (T::one() - eps) * theta.emax);
                let dy = y - hi;
                let value = z_h + s_h * dy;
                InverseWithPartials {
                    value,
                    d_y: s_h,
                    d_e0: -s_h,
                    d_emax: -s_h * dy / theta.emax - s_h * (T::one() - eps),
                    d_ed50: value / theta.ed50,
                    d_hill: -z_h * log_q * inv_hill * inv_hill
                        - dy * s_h * (log_q * inv_hill * inv_hill + inv_hill),
                    clamped: true,
                }
            }
            DefaultModel::SigmoidEmax { theta, .. } => {
                let (lo, hi) = self.clamp_range().expect("sigmoid has a clamp range");
                // At y = E₀ the slope is unbounded for λ > 1; treat it as a
                // clamped point with zero slope.
                let clamped = y <= lo || y > hi;
                let yc = y.max(lo).min(hi);
                let u = yc - theta.e0;
                let v = theta.emax - u;
                let q = u / v;
                let inv_hill = T::one() / theta.hill;
                let z = theta.ed50 * q.powf(inv_hill);
                let (d_ed50, d_hill) = if q > T::zero() {
                    (z / theta.ed50, -z * q.ln() * inv_hill * inv_hill)
                } else {
                    (T::zero(), T::zero())
                };
                if clamped {
                    InverseWithPartials {
                        value: z,
                        d_y: T::zero(),
                        d_e0: T::zero(),
                        d_emax: T::zero(),
                        d_ed50,
                        d_hill,
                        clamped,
                    }
                } else {
                    // z = ED50 (u/v)^(1/λ), u = y - E0, v = E_max - u
                    let d_y = z * theta.emax * inv_hill / (u * v);
                    InverseWithPartials {
                        value: z,
                        d_y,
                        d_e0: -d_y,
                        d_emax: -z * inv_hill / v,
                        d_ed50,
                        d_hill,
                        clamped,
                    }
                }
            }
        }
    }
}

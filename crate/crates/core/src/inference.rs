//! Proof-of-concept testing, curve interpolation and MED estimation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{ObjectiveSpec, Posterior};
use crate::scalar::Scalar;
use crate::seeding::{self, Stream};
use crate::solver::{map_fit_posterior, MapFit, SolverOptions};
use crate::trials::{generate_current_trial, generate_historical_trial, Scenario, TrialDesign, TrueCurve};

/// Largest dose effect over placebo: `max(μ̂₁..μ̂_M) − μ̂₀`.
pub fn statistic_from_mu<T: Scalar>(mu: &[T]) -> T {
    assert!(mu.len() >= 2, "the statistic needs a placebo and at least one active dose");
    let top = mu[1..].iter().copied().fold(T::neg_infinity(), T::max);
    top - mu[0]
}

pub fn test_statistic<T: Scalar>(fit: &MapFit<T>) -> T {
    statistic_from_mu(&fit.mu_hat)
}

/// Proof of concept is declared iff `T > c`.
pub fn detect_poc<T: Scalar>(fit: &MapFit<T>, c: T) -> bool {
    test_statistic(fit) > c
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

/// Smallest observed statistic `c` with `#{T > c} / R < alpha`.
pub fn critical_value_from_statistics(stats: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let r = stats.len();
    if alpha * (r as f64) < 5.0 {
        return Err(Error::InsufficientReplicates { product: alpha * r as f64 });
    }
    if stats.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidData("non-finite null statistic".into()));
    }
    let mut sorted = stats.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let limit = alpha * r as f64;
    let mut k = 0;
    while k < r {
        // skip to the last copy of a tied value
        let mut end = k;
        while end + 1 < r && sorted[end + 1] == sorted[k] {
            end += 1;
        }
        let above = r - end - 1;
        if (above as f64) < limit {
            return Ok(sorted[k]);
        }
        k = end + 1;
    }
    unreachable!("the maximum has no exceedances")
}

/// Fraction of statistics strictly above `c`.
pub fn rejection_rate(stats: &[f64], c: f64) -> f64 {
    if stats.is_empty() {
        return f64::NAN;
    }
    stats.iter().filter(|t| **t > c).count() as f64 / stats.len() as f64
}

/// Historical part of a null design.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoricalNull {
    pub scenario: Scenario,
    pub a: f64,
    pub r: f64,
}

/// Trials simulated under the flat null: all current means 0 and, when
/// borrowing, historical means `a·0 − r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NullDesign {
    pub design: TrialDesign,
    pub historical: Option<HistoricalNull>,
}

/// Test statistics of `replicates` null trials fitted with `spec`.
///
/// Replicate `i` uses seeds derived from `(seed, i)` only, so the result does
/// not depend on how replicates are scheduled.
pub fn null_statistics(
    null: &NullDesign,
    spec: &ObjectiveSpec<f64>,
    solver: &SolverOptions<f64>,
    replicates: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..replicates)
        .into_par_iter()
        .map(|i| {
            let i = i as u64;
            let current = generate_current_trial(&TrueCurve::Null, &null.design, seeding::mix(seed, i, Stream::CalibrationCurrent))?;
            let historical = match null.historical {
                Some(h) => Some(generate_historical_trial(
                    &TrueCurve::Null,
                    h.scenario,
                    h.a,
                    h.r,
                    &null.design,
                    seeding::mix(seed, i, Stream::CalibrationHistorical),
                )?),
                None => None,
            };
            let posterior = Posterior::new(spec.clone(), &current, historical.as_ref())?;
            let opts = SolverOptions { seed: seeding::mix(seed, i, Stream::Solver), ..*solver };
            Ok(test_statistic(&map_fit_posterior(&posterior, &opts)?))
        })
        .collect()
}

/// A calibrated max-contrast test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PocTest {
    pub alpha: f64,
    pub replicates: usize,
    pub critical_value: f64,
    pub seed: u64,
    /// Exceedance rate of `critical_value` on the calibration sample.
    pub calibration_rate: f64,
}

/// Monte Carlo calibration of the critical value under the flat null.
pub fn calibrate_critical_value(
    null: &NullDesign,
    spec: &ObjectiveSpec<f64>,
    solver: &SolverOptions<f64>,
    alpha: f64,
    replicates: usize,
    seed: u64,
) -> Result<PocTest> {
    check_alpha(alpha)?;
    if alpha * (replicates as f64) < 5.0 {
        return Err(Error::InsufficientReplicates { product: alpha * replicates as f64 });
    }
    let stats = null_statistics(null, spec, solver, replicates, seed)?;
    let c = critical_value_from_statistics(&stats, alpha)?;
    Ok(PocTest {
        alpha,
        replicates,
        critical_value: c,
        seed,
        calibration_rate: rejection_rate(&stats, c),
    })
}

/// Piecewise-linear interpolation of `(doses, mu)`.
pub fn interpolate<T: Scalar>(doses: &[T], mu: &[T], x: T) -> Result<T> {
    let (lo, hi) = (doses[0], doses[doses.len() - 1]);
    if !(x >= lo && x <= hi) {
        return Err(Error::Extrapolation { x: x.as_f64(), lo: lo.as_f64(), hi: hi.as_f64() });
    }
    let k = doses.partition_point(|d| *d <= x);
    if k == 0 {
        return Ok(mu[0]);
    }
    let i = k - 1;
    if doses[i] == x || i + 1 == doses.len() {
        return Ok(mu[i]);
    }
    let t = (x - doses[i]) / (doses[i + 1] - doses[i]);
    Ok(mu[i] + t * (mu[i + 1] - mu[i]))
}

/// Estimated mean response at dose `x`.
pub fn interpolate_curve<T: Scalar>(fit: &MapFit<T>, x: T) -> Result<T> {
    interpolate(&fit.doses, &fit.mu_hat, x)
}

/// What the MED threshold is measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MedReference {
    /// The fitted placebo mean μ̂₀.
    #[default]
    EstimatedPlacebo,
    /// Absolute zero.
    Absolute,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MedSpec<T> {
    pub delta: T,
    #[serde(default)]
    pub reference: MedReference,
}

impl<T: Scalar> Default for MedSpec<T> {
    fn default() -> Self {
        MedSpec { delta: T::lit(0.3), reference: MedReference::EstimatedPlacebo }
    }
}

/// Estimated minimum effective dose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Med<T> {
    Dose(T),
    NotReached,
}

impl<T: Scalar> Med<T> {
    pub fn dose(self) -> Option<T> {
        match self {
            Med::Dose(x) => Some(x),
            Med::NotReached => None,
        }
    }

    /// Total order with not-reached after every dose.
    pub fn sort_key(self) -> T {
        self.dose().unwrap_or(T::infinity())
    }
}

/// First dose at which the piecewise-linear curve exceeds the reference by
/// at least `delta`.
pub fn med_from_curve<T: Scalar>(doses: &[T], mu: &[T], spec: &MedSpec<T>) -> Result<Med<T>> {
    if !(spec.delta > T::zero()) {
        return Err(Error::InvalidOptions(format!("MED threshold {} must be positive", spec.delta)));
    }
    let reference = match spec.reference {
        MedReference::EstimatedPlacebo => mu[0],
        MedReference::Absolute => T::zero(),
    };
    let effect = |i: usize| mu[i] - reference;
    if effect(0) >= spec.delta {
        return Ok(Med::Dose(doses[0]));
    }
    for i in 0..doses.len() - 1 {
        let (e0, e1) = (effect(i), effect(i + 1));
        if e1 >= spec.delta {
            if e1 == spec.delta {
                return Ok(Med::Dose(doses[i + 1]));
            }
            let x = doses[i] + (spec.delta - e0) * (doses[i + 1] - doses[i]) / (e1 - e0);
            return Ok(Med::Dose(x.max(doses[i]).min(doses[i + 1])));
        }
    }
    Ok(Med::NotReached)
}

pub fn estimate_med<T: Scalar>(fit: &MapFit<T>, spec: &MedSpec<T>) -> Result<Med<T>> {
    med_from_curve(&fit.doses, &fit.mu_hat, spec)
}

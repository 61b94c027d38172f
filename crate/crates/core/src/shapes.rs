//! True dose-response shapes used to generate virtual trials.
//!
//! Every shape is normalized to a placebo effect of 0 and a maximum effect of
//! 0.5 on [0, 1]. Each family has one free parameter which
//! [`calibrate_shape`] tunes so the shape first reaches the relevance
//! threshold at a target minimum effective dose. The remaining parameters are
//! fixed by the per-family conventions in [`FamilyConvention`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum effect every calibrated shape attains on [0, 1].
pub const MAX_EFFECT: f64 = 0.5;

/// Default clinical relevance threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.3;

const MED_GRID_POINTS: usize = 10_001;
const MED_BISECTION_TOL: f64 = 1e-10;
const CALIBRATION_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ShapeFamily {
    Linear,
    Emax1,
    Emax2,
    Exponential1,
    Quadratic1,
    Logistic1,
    Exponential2,
    Quadratic2,
    SigEmax,
    Power,
    Logistic2,
    BetaMod,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 12] = [
        ShapeFamily::Linear,
        ShapeFamily::Emax1,
        ShapeFamily::Emax2,
        ShapeFamily::Exponential1,
        ShapeFamily::Quadratic1,
        ShapeFamily::Logistic1,
        ShapeFamily::Exponential2,
        ShapeFamily::Quadratic2,
        ShapeFamily::SigEmax,
        ShapeFamily::Power,
        ShapeFamily::Logistic2,
        ShapeFamily::BetaMod,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Linear => "linear",
            ShapeFamily::Emax1 => "emax1",
            ShapeFamily::Emax2 => "emax2",
            ShapeFamily::Exponential1 => "exponential1",
            ShapeFamily::Quadratic1 => "quadratic1",
            ShapeFamily::Logistic1 => "logistic1",
            ShapeFamily::Exponential2 => "exponential2",
            ShapeFamily::Quadratic2 => "quadratic2",
            ShapeFamily::SigEmax => "sigEmax",
            ShapeFamily::Power => "power",
            ShapeFamily::Logistic2 => "logistic2",
            ShapeFamily::BetaMod => "betaMod",
        }
    }

    /// True minimum effective dose at threshold 0.3 that the calibrated
    /// shape is tuned to.
    pub fn reference_med(self) -> f64 {
        match self {
            ShapeFamily::Linear => 0.600,
            ShapeFamily::Emax1 => 0.334,
            ShapeFamily::Emax2 => 0.083,
            ShapeFamily::Exponential1 => 0.916,
            ShapeFamily::Quadratic1 => 0.216,
            ShapeFamily::Logistic1 => 0.713,
            ShapeFamily::Exponential2 => 0.828,
            ShapeFamily::Quadratic2 => 0.257,
            ShapeFamily::SigEmax => 0.291,
            ShapeFamily::Power => 0.360,
            ShapeFamily::Logistic2 => 0.601,
            ShapeFamily::BetaMod => 0.075,
        }
    }

    /// Whether the family is nondecreasing on [0, 1].
    pub fn is_monotone(self) -> bool {
        !matches!(
            self,
            ShapeFamily::Quadratic1 | ShapeFamily::Quadratic2 | ShapeFamily::BetaMod
        )
    }

    pub fn convention(self) -> FamilyConvention {
        use ShapeFamily::*;
        match self {
            Linear => FamilyConvention {
                family: self,
                free_parameter: None,
                bracket: None,
                fixed: vec![],
            },
            Emax1 | Emax2 => FamilyConvention {
                family: self,
                free_parameter: Some("ed50"),
                bracket: Some((1e-4, 20.0)),
                fixed: vec![],
            },
            Exponential1 | Exponential2 => FamilyConvention {
                family: self,
                free_parameter: Some("delta"),
                bracket: Some((0.02, 100.0)),
                fixed: vec![],
            },
            Quadratic1 | Quadratic2 => FamilyConvention {
                family: self,
                free_parameter: Some("peak_dose"),
                bracket: Some((0.02, 1000.0)),
                fixed: vec![],
            },
            Logistic1 => FamilyConvention {
                family: self,
                free_parameter: Some("ed50"),
                bracket: Some((-2.0, 3.0)),
                fixed: vec![("delta", 0.1)],
            },
            Logistic2 => FamilyConvention {
                family: self,
                free_parameter: Some("ed50"),
                bracket: Some((-2.0, 3.0)),
                fixed: vec![("delta", 0.3)],
            },
            SigEmax => FamilyConvention {
                family: self,
                free_parameter: Some("ed50"),
                bracket: Some((1e-3, 10.0)),
                fixed: vec![("hill", 3.0)],
            },
            Power => FamilyConvention {
                family: self,
                free_parameter: Some("exponent"),
                bracket: Some((0.01, 20.0)),
                fixed: vec![],
            },
            BetaMod => FamilyConvention {
                family: self,
                free_parameter: Some("delta1"),
                bracket: Some((0.01, 10.0)),
                fixed: vec![("delta2", 2.31), ("scal", 1.2)],
            },
        }
    }

    fn fixed(self, key: &str) -> f64 {
        self.convention()
            .fixed
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .expect("fixed parameter declared by convention")
    }

    /// Builds the normalized shape for a value of the free parameter.
    fn build(self, free: f64) -> Result<ShapeSpec> {
        use ShapeFamily::*;
        let params = match self {
            Linear => ShapeParams::Linear { slope: MAX_EFFECT },
            Emax1 | Emax2 => ShapeParams::Emax {
                emax: MAX_EFFECT * (1.0 + free),
                ed50: free,
            },
            Exponential1 | Exponential2 => ShapeParams::Exponential {
                e1: MAX_EFFECT / (1.0 / free).exp_m1(),
                delta: free,
            },
            Quadratic1 | Quadratic2 => {
                // Umbrella peaking at `free` with height 0.5; past x = 1 the
                // curve is monotone on [0, 1] and rescaled so f(1) = 0.5.
                let peak = free;
                let height_at_max = if peak <= 1.0 {
                    1.0
                } else {
                    2.0 / peak - 1.0 / (peak * peak)
                };
                let c = MAX_EFFECT / height_at_max;
                ShapeParams::Quadratic {
                    b1: 2.0 * c / peak,
                    b2: -c / (peak * peak),
                }
            }
            Logistic1 | Logistic2 => {
                let delta = self.fixed("delta");
                let at = |x: f64| expit((x - free) / delta);
                let span = at(1.0) - at(0.0);
                let emax = MAX_EFFECT / span;
                ShapeParams::Logistic {
                    e0: -emax * at(0.0),
                    emax,
                    ed50: free,
                    delta,
                }
            }
            SigEmax => {
                let hill = self.fixed("hill");
                ShapeParams::SigEmax {
                    emax: MAX_EFFECT * (1.0 + free.powf(hill)),
                    ed50: free,
                    hill,
                }
            }
            Power => ShapeParams::Power {
                scale: MAX_EFFECT,
                exponent: free,
            },
            BetaMod => {
                let delta1 = free;
                let delta2 = self.fixed("delta2");
                let scal = self.fixed("scal");
                let peak = scal * delta1 / (delta1 + delta2);
                let kernel = beta_kernel(peak, delta1, delta2, scal);
                ShapeParams::BetaMod {
                    emax: MAX_EFFECT / kernel,
                    delta1,
                    delta2,
                    scal,
                }
            }
        };
        ShapeSpec::new(self, params)
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeFamily::ALL
            .iter()
            .copied()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidShape(format!("unknown shape family `{s}`")))
    }
}

/// Per-family calibration convention: which parameter is solved for, the
/// search bracket, and the values of the parameters held fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyConvention {
    pub family: ShapeFamily,
    pub free_parameter: Option<&'static str>,
    pub bracket: Option<(f64, f64)>,
    pub fixed: Vec<(&'static str, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ShapeParams {
    /// `slope * x`
    Linear { slope: f64 },
    /// `emax * x / (x + ed50)`
    Emax { emax: f64, ed50: f64 },
    /// `e1 * (exp(x / delta) - 1)`
    Exponential { e1: f64, delta: f64 },
    /// `b1 * x + b2 * x^2`
    Quadratic { b1: f64, b2: f64 },
    /// `e0 + emax / (1 + exp((ed50 - x) / delta))`
    Logistic { e0: f64, emax: f64, ed50: f64, delta: f64 },
    /// `emax * x^hill / (x^hill + ed50^hill)`
    SigEmax { emax: f64, ed50: f64, hill: f64 },
    /// `scale * x^exponent`
    Power { scale: f64, exponent: f64 },
    /// `emax * (x / scal)^delta1 * (1 - x / scal)^delta2`
    BetaMod { emax: f64, delta1: f64, delta2: f64, scal: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub family: ShapeFamily,
    pub params: ShapeParams,
}

impl ShapeSpec {
    pub fn new(family: ShapeFamily, params: ShapeParams) -> Result<Self> {
        let spec = ShapeSpec { family, params };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidShape(format!("{}: {msg}", self.family)));
        let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
        match self.params {
            ShapeParams::Linear { slope } if !finite(&[slope]) => bad("non-finite slope"),
            ShapeParams::Emax { emax, ed50 } if !finite(&[emax, ed50]) || ed50 <= 0.0 => {
                bad("ed50 must be positive")
            }
            ShapeParams::Exponential { e1, delta } if !finite(&[e1, delta]) || delta <= 0.0 => {
                bad("delta must be positive")
            }
            ShapeParams::Quadratic { b1, b2 } if !finite(&[b1, b2]) => bad("non-finite coefficients"),
            ShapeParams::Logistic { e0, emax, ed50, delta }
                if !finite(&[e0, emax, ed50, delta]) || delta <= 0.0 =>
            {
                bad("delta must be positive")
            }
            ShapeParams::SigEmax { emax, ed50, hill }
                if !finite(&[emax, ed50, hill]) || ed50 <= 0.0 || hill <= 0.0 =>
            {
                bad("ed50 and hill must be positive")
            }
            ShapeParams::Power { scale, exponent }
                if !finite(&[scale, exponent]) || exponent <= 0.0 =>
            {
                bad("exponent must be positive")
            }
            ShapeParams::BetaMod { emax, delta1, delta2, scal }
                if !finite(&[emax, delta1, delta2, scal])
                    || delta1 <= 0.0
                    || delta2 <= 0.0
                    || scal <= 1.0 =>
            {
                bad("delta1, delta2 must be positive and scal > 1")
            }
            _ => Ok(()),
        }
    }

    /// Mean response at dose `x`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::DoseOutOfRange(x));
        }
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: f64) -> f64 {
        match self.params {
            ShapeParams::Linear { slope } => slope * x,
            ShapeParams::Emax { emax, ed50 } => emax * x / (x + ed50),
            ShapeParams::Exponential { e1, delta } => e1 * (x / delta).exp_m1(),
            ShapeParams::Quadratic { b1, b2 } => b1 * x + b2 * x * x,
            ShapeParams::Logistic { e0, emax, ed50, delta } => e0 + emax * expit((x - ed50) / delta),
            ShapeParams::SigEmax { emax, ed50, hill } => {
                let xh = x.powf(hill);
                emax * xh / (xh + ed50.powf(hill))
            }
            ShapeParams::Power { scale, exponent } => scale * x.powf(exponent),
            ShapeParams::BetaMod { emax, delta1, delta2, scal } => {
                emax * beta_kernel(x, delta1, delta2, scal)
            }
        }
    }

    /// Maximum of the curve over a dense grid on [0, 1].
    pub fn max_effect(&self) -> f64 {
        (0..MED_GRID_POINTS)
            .map(|k| self.eval_unchecked(k as f64 / (MED_GRID_POINTS - 1) as f64))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn expit(x: f64) -> f64 {
    crate::scalar::expit(x)
}

fn beta_kernel(x: f64, delta1: f64, delta2: f64, scal: f64) -> f64 {
    let u = x / scal;
    if u <= 0.0 {
        0.0
    } else {
        u.powf(delta1) * (1.0 - u).powf(delta2)
    }
}

/// Evaluates a shape at dose `x`.
pub fn eval_shape(spec: &ShapeSpec, x: f64) -> Result<f64> {
    spec.eval(x)
}

/// Smallest dose at which the shape reaches `threshold`.
///
/// Brackets the first crossing on a 10 001-point grid and bisects it to 1e-8.
pub fn true_med(spec: &ShapeSpec, threshold: f64) -> Result<f64> {
    let n = MED_GRID_POINTS;
    let xs = |k: usize| k as f64 / (n - 1) as f64;
    if spec.eval_unchecked(0.0) >= threshold {
        return Ok(0.0);
    }
    let upper = (1..n).find(|&k| spec.eval_unchecked(xs(k)) >= threshold);
    let Some(k) = upper else {
        return Err(Error::ThresholdNotReached {
            threshold,
            max: spec.max_effect(),
        });
    };
    let (mut lo, mut hi) = (xs(k - 1), xs(k));
    while hi - lo > MED_BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if spec.eval_unchecked(mid) >= threshold {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Calibrates the family's free parameter so the shape first reaches
/// `threshold` at `target_med`.
pub fn calibrate_shape(family: ShapeFamily, target_med: f64, threshold: f64) -> Result<ShapeSpec> {
    let infeasible = |reason: String| Error::CalibrationInfeasible {
        family: family.to_string(),
        reason,
    };
    if !(target_med > 0.0 && target_med < 1.0) {
        return Err(infeasible(format!("target MED {target_med} outside (0, 1)")));
    }
    if !(threshold > 0.0 && threshold < MAX_EFFECT) {
        return Err(infeasible(format!("threshold {threshold} outside (0, {MAX_EFFECT})")));
    }
    let convention = family.convention();
    let spec = match convention.bracket {
        None => {
            let spec = family.build(0.0)?;
            let med = threshold / MAX_EFFECT;
            if (med - target_med).abs() > 1e-6 {
                return Err(infeasible(format!(
                    "linear shape has MED {med} at threshold {threshold}, not {target_med}"
                )));
            }
            spec
        }
        Some((lo, hi)) => {
            // an umbrella must peak at or after its first crossing
            let lo = match family {
                ShapeFamily::Quadratic1 | ShapeFamily::Quadratic2 => lo.max(target_med),
                _ => lo,
            };
            let gap = |p: f64| -> Result<f64> { Ok(family.build(p)?.eval_unchecked(target_med) - threshold) };
            let (mut a, mut b) = (lo, hi);
            let (mut ga, gb) = (gap(a)?, gap(b)?);
            if ga.signum() == gb.signum() {
                return Err(infeasible(format!(
                    "no sign change of f({target_med}) - {threshold} over bracket [{lo}, {hi}]"
                )));
            }
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                let gm = gap(mid)?;
                if gm == 0.0 {
                    a = mid;
                    b = mid;
                    break;
                }
                if gm.signum() == ga.signum() {
                    a = mid;
                    ga = gm;
                } else {
                    b = mid;
                }
                if (b - a).abs() <= CALIBRATION_TOL * (1.0 + a.abs()) {
                    break;
                }
            }
            family.build(0.5 * (a + b))?
        }
    };
    // The crossing found must also be the first one.
    let achieved = true_med(&spec, threshold)?;
    if (achieved - target_med).abs() > 1e-6 {
        return Err(infeasible(format!(
            "calibrated shape first crosses {threshold} at {achieved}, not {target_med}"
        )));
    }
    Ok(spec)
}

/// One entry of the shape manifest written by `calibrate-shapes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub family: ShapeFamily,
    pub target_med: f64,
    pub achieved_med: f64,
    pub free_parameter: Option<String>,
    pub bracket: Option<(f64, f64)>,
    pub fixed: Vec<(String, f64)>,
    pub params: ShapeParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeManifest {
    pub threshold: f64,
    pub max_effect: f64,
    pub shapes: Vec<ManifestEntry>,
}

impl ShapeManifest {
    /// Calibrates all twelve families at their reference MEDs.
    pub fn calibrate_all(threshold: f64) -> Result<Self> {
        let shapes = ShapeFamily::ALL
            .iter()
            .map(|&family| {
                let spec = calibrate_shape(family, family.reference_med(), threshold)?;
                let convention = family.convention();
                Ok(ManifestEntry {
                    family,
                    target_med: family.reference_med(),
                    achieved_med: true_med(&spec, threshold)?,
                    free_parameter: convention.free_parameter.map(str::to_owned),
                    bracket: convention.bracket,
                    fixed: convention.fixed.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
                    params: spec.params,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ShapeManifest {
            threshold,
            max_effect: MAX_EFFECT,
            shapes,
        })
    }

    pub fn spec(&self, family: ShapeFamily) -> Option<ShapeSpec> {
        self.shapes
            .iter()
            .find(|e| e.family == family)
            .map(|e| ShapeSpec { family, params: e.params })
    }
}

/// Calibrated shape for `family` at its reference MED and threshold 0.3.
pub fn standard_shape(family: ShapeFamily) -> ShapeSpec {
    calibrate_shape(family, family.reference_med(), DEFAULT_THRESHOLD)
        .expect("reference calibrations are feasible")
}

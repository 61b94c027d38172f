//! Virtual trial generation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{TrialDataset, TrialKind};
use crate::shapes::ShapeSpec;

/// Current-trial design: doses, patients per arm and known response SD.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialDesign {
    pub doses: Vec<f64>,
    pub n_per_arm: usize,
    pub sigma: f64,
}

impl Default for TrialDesign {
    fn default() -> Self {
        TrialDesign {
            doses: vec![0.0, 0.15, 0.5, 0.8, 1.0],
            n_per_arm: 40,
            sigma: 1.0,
        }
    }
}

impl TrialDesign {
    pub fn validate(&self) -> Result<()> {
        if self.doses.len() < 2 || self.n_per_arm == 0 || !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidData("design needs >= 2 doses, >= 1 patient per arm and sigma >= 0".into()));
        }
        if self.doses.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(Error::InvalidData("design doses must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Availability of historical data; the dose sets are fixed per scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Scenario {
    S1,
    S2,
    S3,
    S4,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4];

    pub fn number(self) -> u8 {
        match self {
            Scenario::S1 => 1,
            Scenario::S2 => 2,
            Scenario::S3 => 3,
            Scenario::S4 => 4,
        }
    }

    /// Historical doses, empty for scenario 4.
    pub fn historical_doses(self) -> &'static [f64] {
        match self {
            Scenario::S1 => &[0.0, 0.15, 0.5, 0.8, 1.0],
            Scenario::S2 => &[0.0, 0.15, 0.2, 0.8, 1.0],
            Scenario::S3 => &[0.0, 0.8, 1.0],
            Scenario::S4 => &[],
        }
    }

    pub fn has_historical(self) -> bool {
        self != Scenario::S4
    }
}

impl TryFrom<u8> for Scenario {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Scenario::S1),
            2 => Ok(Scenario::S2),
            3 => Ok(Scenario::S3),
            4 => Ok(Scenario::S4),
            _ => Err(Error::InvalidScenario(format!("scenario {v} (expected 1-4)"))),
        }
    }
}

impl From<Scenario> for u8 {
    fn from(s: Scenario) -> u8 {
        s.number()
    }
}

/// Data-generating mean curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TrueCurve {
    /// Flat at zero.
    Null,
    Shape(ShapeSpec),
}

impl TrueCurve {
    pub fn mean(&self, x: f64) -> Result<f64> {
        match self {
            TrueCurve::Null => {
                if (0.0..=1.0).contains(&x) {
                    Ok(0.0)
                } else {
                    Err(Error::DoseOutOfRange(x))
                }
            }
            TrueCurve::Shape(s) => s.eval(x),
        }
    }
}

fn draw(kind: TrialKind, doses: &[f64], means: &[f64], n: usize, sigma: f64, seed: u64) -> Result<TrialDataset<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let responses = means
        .iter()
        .map(|m| {
            (0..n)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    m + sigma * e
                })
                .collect()
        })
        .collect();
    TrialDataset::new(kind, sigma, doses.to_vec(), responses)
}

/// Responses `f(xᵢ) + σε` at the design doses.
pub fn generate_current_trial(curve: &TrueCurve, design: &TrialDesign, seed: u64) -> Result<TrialDataset<f64>> {
    design.validate()?;
    let means = design.doses.iter().map(|x| curve.mean(*x)).collect::<Result<Vec<_>>>()?;
    draw(TrialKind::Current, &design.doses, &means, design.n_per_arm, design.sigma, seed)
}

/// Responses `a·f(xᵢ) − r + σε` at the scenario's historical doses.
pub fn generate_historical_trial(
    curve: &TrueCurve,
    scenario: Scenario,
    a: f64,
    r: f64,
    design: &TrialDesign,
    seed: u64,
) -> Result<TrialDataset<f64>> {
    if !scenario.has_historical() {
        return Err(Error::NoHistoricalTrial);
    }
    design.validate()?;
    let doses = scenario.historical_doses();
    let means = doses.iter().map(|x| Ok(a * curve.mean(*x)? - r)).collect::<Result<Vec<_>>>()?;
    draw(TrialKind::Historical, doses, &means, design.n_per_arm, design.sigma, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::{standard_shape, ShapeFamily};

    #[test]
    fn default_design_sizes() {
        let curve = TrueCurve::Shape(standard_shape(ShapeFamily::Emax2));
        let d = generate_current_trial(&curve, &TrialDesign::default(), 1).unwrap();
        assert_eq!(d.total_n(), 200);
        assert!(d.responses().iter().all(|ys| ys.len() == 40));
    }

    #[test]
    fn zero_sigma_is_exact() {
        let shape = standard_shape(ShapeFamily::Linear);
        let design = TrialDesign { sigma: 0.0, ..TrialDesign::default() };
        let d = generate_current_trial(&TrueCurve::Shape(shape), &design, 3).unwrap();
        for (x, ys) in d.doses().iter().zip(d.responses()) {
            assert!(ys.iter().all(|y| *y == shape.eval(*x).unwrap()));
        }
        let h = generate_historical_trial(&TrueCurve::Shape(shape), Scenario::S1, 1.0, 0.0, &design, 4).unwrap();
        assert_eq!(h.means(), d.means());
        let h = generate_historical_trial(&TrueCurve::Shape(shape), Scenario::S3, 0.8, 0.2, &design, 4).unwrap();
        assert_eq!(h.doses(), &[0.0, 0.8, 1.0]);
        assert!((h.means()[2] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn deterministic_given_seed() {
        let curve = TrueCurve::Null;
        let a = generate_current_trial(&curve, &TrialDesign::default(), 9).unwrap();
        let b = generate_current_trial(&curve, &TrialDesign::default(), 9).unwrap();
        let c = generate_current_trial(&curve, &TrialDesign::default(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn scenario_four_has_no_history() {
        let r = generate_historical_trial(&TrueCurve::Null, Scenario::S4, 1.0, 0.0, &TrialDesign::default(), 1);
        assert!(matches!(r, Err(Error::NoHistoricalTrial)));
        assert!(Scenario::try_from(5).is_err());
    }
}

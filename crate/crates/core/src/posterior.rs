//! Log-posterior of the curvature-penalized model, with optional borrowing
//! from one historical trial.
//!
//! The objective (additive constants dropped) is
//!
//! ```text
//! −γ²/(2τ²) + log p(θ) ± log γ − S²/(2γ²) + Σ log 1[μᵢ ∈ support] + log L
//! ```
//!
//! and, when a historical trial is borrowed, `log p(a) + log p(r)` with the
//! current responses centred at `μᵢ + r` and the historical ones at `aμᵢ − r`.
//! [`Posterior`] binds the objective to data and exposes it in an
//! unconstrained parameterization for the optimizer.

use serde::{Deserialize, Serialize};

use crate::curvature::{self, DoseGrid};
use crate::error::{Error, Result};
use crate::scalar::{expit, logit, Scalar};
use crate::transform::{DefaultModel, EmaxParams, ModelKind, RangePolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialKind {
    Current,
    Historical,
}

/// Patient responses of one trial, grouped by dose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset<T> {
    kind: TrialKind,
    sigma: T,
    doses: Vec<T>,
    responses: Vec<Vec<T>>,
}

impl<T: Scalar> TrialDataset<T> {
    /// `sigma` is the known response SD used in the likelihood. Zero is
    /// accepted here so noiseless designs can be represented; fitting needs
    /// `sigma > 0`.
    pub fn new(kind: TrialKind, sigma: T, doses: Vec<T>, responses: Vec<Vec<T>>) -> Result<Self> {
        if doses.len() != responses.len() {
            return Err(Error::InvalidData(format!(
                "{} doses but {} response groups",
                doses.len(),
                responses.len()
            )));
        }
        if doses.is_empty() {
            return Err(Error::InvalidData("trial has no dose groups".into()));
        }
        if !(sigma >= T::zero() && sigma.is_finite()) {
            return Err(Error::InvalidData(format!("sigma = {sigma} must be finite and >= 0")));
        }
        for (d, ys) in doses.iter().zip(&responses) {
            if !(*d >= T::zero() && *d <= T::one()) {
                return Err(Error::DoseOutOfRange(d.as_f64()));
            }
            if ys.is_empty() {
                return Err(Error::InvalidData(format!("dose {d} has no responses")));
            }
            if ys.iter().any(|y| !y.is_finite()) {
                return Err(Error::InvalidData(format!("non-finite response at dose {d}")));
            }
        }
        let mut sorted = doses.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite doses"));
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidData("duplicate dose group".into()));
        }
        Ok(TrialDataset { kind, sigma, doses, responses })
    }

    /// Groups `(dose, response)` pairs by dose, in order of first appearance.
    pub fn from_pairs(kind: TrialKind, sigma: T, pairs: &[(T, T)]) -> Result<Self> {
        let mut doses: Vec<T> = Vec::new();
        let mut responses: Vec<Vec<T>> = Vec::new();
        for &(d, y) in pairs {
            match doses.iter().position(|x| *x == d) {
                Some(k) => responses[k].push(y),
                None => {
                    doses.push(d);
                    responses.push(vec![y]);
                }
            }
        }
        TrialDataset::new(kind, sigma, doses, responses)
    }

    pub fn kind(&self) -> TrialKind {
        self.kind
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn doses(&self) -> &[T] {
        &self.doses
    }

    pub fn responses(&self) -> &[Vec<T>] {
        &self.responses
    }

    pub fn total_n(&self) -> usize {
        self.responses.iter().map(Vec::len).sum()
    }

    /// Grid index of every dose group.
    pub fn grid_indices(&self, grid: &DoseGrid<T>) -> Result<Vec<usize>> {
        self.doses
            .iter()
            .map(|d| {
                grid.index_of(*d)
                    .ok_or_else(|| Error::InvalidData(format!("dose {d} is not on the analysis grid")))
            })
            .collect()
    }

    pub fn means(&self) -> Vec<T> {
        self.responses.iter().map(|ys| mean(ys)).collect()
    }
}

fn mean<T: Scalar>(ys: &[T]) -> T {
    ys.iter().copied().sum::<T>() / T::from_usize(ys.len()).expect("count fits")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalPrior<T> {
    pub mean: T,
    pub sd: T,
}

impl<T: Scalar> NormalPrior<T> {
    fn log_kernel(&self, v: T) -> T {
        let z = (v - self.mean) / self.sd;
        -T::lit(0.5) * z * z
    }

    fn d_log_kernel(&self, v: T) -> T {
        -(v - self.mean) / (self.sd * self.sd)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum E0Prior<T> {
    Fixed { value: T },
    Normal { mean: T, sd: T },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GammaParameterization {
    #[default]
    ShapeRate,
    ShapeScale,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPrior<T> {
    pub shape: T,
    /// Rate or scale, depending on `parameterization`.
    pub second: T,
    #[serde(default)]
    pub parameterization: GammaParameterization,
}

impl<T: Scalar> GammaPrior<T> {
    pub fn rate(&self) -> T {
        match self.parameterization {
            GammaParameterization::ShapeRate => self.second,
            GammaParameterization::ShapeScale => T::one() / self.second,
        }
    }

    pub fn mean(&self) -> T {
        self.shape / self.rate()
    }
}

/// Priors on θ. The ED₅₀ normal is truncated to [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct ThetaPriors<T> {
    pub e0: E0Prior<T>,
    pub emax: NormalPrior<T>,
    pub ed50: NormalPrior<T>,
    pub hill: GammaPrior<T>,
}

/// Borrowing priors: `r ~ N(0, ρ²)`, `a ~ N(1, η²)` truncated to `[b, 1/b]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct BorrowPriors<T> {
    pub rho: T,
    pub eta: T,
    pub b: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct PriorSet<T> {
    /// Scale of the half-normal hyperprior on γ.
    pub tau: T,
    /// Support of the uniform prior on every μᵢ.
    pub mu_support: [T; 2],
    pub theta: ThetaPriors<T>,
    pub borrow: BorrowPriors<T>,
}

impl<T: Scalar> Default for ThetaPriors<T> {
    fn default() -> Self {
        PriorSet::<T>::standard(T::one()).theta
    }
}

impl<T: Scalar> Default for BorrowPriors<T> {
    fn default() -> Self {
        PriorSet::<T>::standard(T::one()).borrow
    }
}

/// The SEMAP priors of the simulation study (τ = 0.5).
impl<T: Scalar> Default for PriorSet<T> {
    fn default() -> Self {
        PriorSet::standard(T::lit(0.5))
    }
}

impl<T: Scalar> PriorSet<T> {
    /// Priors of the simulation study with hyperprior scale `tau`.
    pub fn standard(tau: T) -> Self {
        PriorSet {
            tau,
            mu_support: [T::zero(), T::one()],
            theta: ThetaPriors {
                e0: E0Prior::Fixed { value: T::zero() },
                emax: NormalPrior { mean: T::lit(0.5), sd: T::lit(0.2) },
                ed50: NormalPrior { mean: T::lit(0.5), sd: T::lit(0.15) },
                hill: GammaPrior {
                    shape: T::lit(2.5),
                    second: T::lit(1.18),
                    parameterization: GammaParameterization::ShapeRate,
                },
            },
            borrow: BorrowPriors {
                rho: T::lit(0.5),
                eta: T::lit(0.2),
                b: T::one() / T::lit(3.0),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidPrior(format!("{name} = {v} must be positive and finite")))
            }
        };
        pos("tau", self.tau)?;
        pos("emax.sd", self.theta.emax.sd)?;
        pos("ed50.sd", self.theta.ed50.sd)?;
        pos("hill.shape", self.theta.hill.shape)?;
        pos("hill.second", self.theta.hill.second)?;
        if let E0Prior::Normal { sd, .. } = self.theta.e0 {
            pos("e0.sd", sd)?;
        }
        pos("rho", self.borrow.rho)?;
        pos("eta", self.borrow.eta)?;
        if !(self.borrow.b > T::zero() && self.borrow.b < T::one()) {
            return Err(Error::InvalidPrior(format!("b = {} must lie in (0, 1)", self.borrow.b)));
        }
        if !(self.mu_support[0].is_finite() && self.mu_support[1].is_finite()) {
            return Err(Error::InvalidPrior("mu support must be finite".into()));
        }
        Ok(())
    }

    fn a_bounds(&self) -> (T, T) {
        (self.borrow.b, T::one() / self.borrow.b)
    }
}

/// Sign of the `log γ` term: as printed in the objective (`+`), or the
/// `−log γ` that the half-normal density of S given γ contributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CurvaturePriorSign {
    #[default]
    PlusLogGamma,
    Density,
}

/// Whether μ₀ is estimated (with its uniform prior) or held at 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PlaceboMode {
    #[default]
    Estimated,
    FixedZero,
}

/// Everything that defines the objective apart from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct ObjectiveSpec<T> {
    pub grid: DoseGrid<T>,
    pub kind: ModelKind,
    pub priors: PriorSet<T>,
    pub curvature_sign: CurvaturePriorSign,
    pub placebo: PlaceboMode,
    pub clamp_epsilon: T,
    /// Out-of-range treatment of the sigmoid inverse inside the objective.
    #[serde(default = "objective_range_policy")]
    pub range_policy: RangePolicy,
}

fn objective_range_policy() -> RangePolicy {
    RangePolicy::Extend
}

impl<T: Scalar> ObjectiveSpec<T> {
    pub fn new(grid: DoseGrid<T>, kind: ModelKind, priors: PriorSet<T>) -> Self {
        ObjectiveSpec {
            grid,
            kind,
            priors,
            curvature_sign: CurvaturePriorSign::PlusLogGamma,
            placebo: PlaceboMode::Estimated,
            clamp_epsilon: T::lit(crate::transform::DEFAULT_CLAMP_EPSILON),
            range_policy: objective_range_policy(),
        }
    }

    pub fn with_range_policy(mut self, policy: RangePolicy) -> Self {
        self.range_policy = policy;
        self
    }

    pub fn with_curvature_sign(mut self, sign: CurvaturePriorSign) -> Self {
        self.curvature_sign = sign;
        self
    }

    pub fn with_placebo(mut self, placebo: PlaceboMode) -> Self {
        self.placebo = placebo;
        self
    }

    fn log_gamma_sign(&self) -> T {
        match self.curvature_sign {
            CurvaturePriorSign::PlusLogGamma => T::one(),
            CurvaturePriorSign::Density => -T::one(),
        }
    }

    /// Default model at `theta`, or `None` if θ is outside the model's domain.
    fn model(&self, theta: Option<&EmaxParams<T>>) -> Option<DefaultModel<T>> {
        match self.kind {
            ModelKind::Identity => Some(DefaultModel::Identity),
            ModelKind::SigmoidEmax => {
                DefaultModel::sigmoid_emax(*theta?, self.clamp_epsilon)
                    .ok()
                    .map(|m| m.with_range(self.range_policy))
            }
        }
    }
}

/// Heterogeneity between the current and historical trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heterogeneity<T> {
    /// Predictive scale.
    pub a: T,
    /// Prognostic shift.
    pub r: T,
}

/// A point in the space of all latent quantities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPoint<T> {
    pub mu: Vec<T>,
    pub gamma: T,
    pub theta: Option<EmaxParams<T>>,
    pub heterogeneity: Option<Heterogeneity<T>>,
}

fn log_theta_prior<T: Scalar>(theta: &EmaxParams<T>, priors: &ThetaPriors<T>) -> T {
    if !(theta.emax > T::zero() && theta.hill > T::zero() && theta.ed50 > T::zero() && theta.ed50 <= T::one()) {
        return T::neg_infinity();
    }
    let e0 = match priors.e0 {
        E0Prior::Fixed { .. } => T::zero(),
        E0Prior::Normal { mean, sd } => NormalPrior { mean, sd }.log_kernel(theta.e0),
    };
    let hill = (priors.hill.shape - T::one()) * theta.hill.ln() - priors.hill.rate() * theta.hill;
    e0 + priors.emax.log_kernel(theta.emax) + priors.ed50.log_kernel(theta.ed50) + hill
}

/// Log prior of a point, `−∞` outside the support.
pub fn log_prior<T: Scalar>(point: &LatentPoint<T>, spec: &ObjectiveSpec<T>) -> Result<T> {
    if point.mu.len() != spec.grid.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.grid.len(),
            got: point.mu.len(),
        });
    }
    let [lo, hi] = spec.priors.mu_support;
    if point.mu.iter().any(|m| !(*m >= lo && *m <= hi)) || !(point.gamma > T::zero()) {
        return Ok(T::neg_infinity());
    }
    let theta_term = match spec.kind {
        ModelKind::Identity => T::zero(),
        ModelKind::SigmoidEmax => match &point.theta {
            Some(theta) => log_theta_prior(theta, &spec.priors.theta),
            None => return Err(Error::InvalidTheta("SEMAP point carries no theta".into())),
        },
    };
    if theta_term == T::neg_infinity() {
        return Ok(T::neg_infinity());
    }
    let model = spec.model(point.theta.as_ref()).ok_or_else(|| {
        Error::InvalidTheta("theta outside the sigmoid Emax domain".into())
    })?;
    let z: Vec<T> = point.mu.iter().map(|m| model.inverse(*m)).collect();
    let s2 = curvature::curvature_squared(&z, &spec.grid);
    let g = point.gamma;
    let tau = spec.priors.tau;
    let two = T::lit(2.0);
    Ok(-g * g / (two * tau * tau) + theta_term + spec.log_gamma_sign() * g.ln() - s2 / (two * g * g))
}

/// Gaussian log likelihood of one trial, constants dropped.
///
/// Current responses are centred at `μᵢ + r`, historical ones at `aμᵢ − r`.
/// Without heterogeneity `a = 1` and `r = 0`.
pub fn log_likelihood<T: Scalar>(point: &LatentPoint<T>, data: &TrialDataset<T>, grid: &DoseGrid<T>) -> Result<T> {
    let idx = data.grid_indices(grid)?;
    if point.mu.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: point.mu.len(),
        });
    }
    let het = point.heterogeneity.unwrap_or(Heterogeneity { a: T::one(), r: T::zero() });
    let s2 = data.sigma * data.sigma;
    let mut total = T::zero();
    for (i, ys) in idx.iter().zip(data.responses()) {
        let centre = match data.kind {
            TrialKind::Current => point.mu[*i] + het.r,
            TrialKind::Historical => het.a * point.mu[*i] - het.r,
        };
        for y in ys {
            let e = *y - centre;
            total = total - e * e / (T::lit(2.0) * s2);
        }
    }
    Ok(total)
}

/// Full log posterior; borrowing terms are included when `historical` is given.
pub fn log_posterior<T: Scalar>(
    point: &LatentPoint<T>,
    current: &TrialDataset<T>,
    historical: Option<&TrialDataset<T>>,
    spec: &ObjectiveSpec<T>,
) -> Result<T> {
    let posterior = Posterior::new(spec.clone(), current, historical)?;
    posterior.value(point)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct ArmStats<T> {
    index: usize,
    n: T,
    mean: T,
    within_ss: T,
}

fn arm_stats<T: Scalar>(data: &TrialDataset<T>, grid: &DoseGrid<T>) -> Result<Vec<ArmStats<T>>> {
    let idx = data.grid_indices(grid)?;
    Ok(idx
        .into_iter()
        .zip(data.responses())
        .map(|(index, ys)| {
            let m = mean(ys);
            ArmStats {
                index,
                n: T::from_usize(ys.len()).expect("count fits"),
                mean: m,
                within_ss: ys.iter().map(|y| (*y - m) * (*y - m)).sum(),
            }
        })
        .collect())
}

/// Layout of the unconstrained parameter vector:
/// `[logit μ (free entries), log γ, (log E_max, logit ED₅₀, log λ, E₀?), (a', r')]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub n_mu: usize,
    pub placebo_fixed: bool,
    pub theta: bool,
    pub e0_free: bool,
    pub borrow: bool,
}

impl Layout {
    pub fn mu_free(&self) -> usize {
        if self.placebo_fixed {
            self.n_mu - 1
        } else {
            self.n_mu
        }
    }

    pub fn gamma(&self) -> usize {
        self.mu_free()
    }

    fn theta_start(&self) -> usize {
        self.gamma() + 1
    }

    fn borrow_start(&self) -> usize {
        self.theta_start() + if self.theta { 3 + usize::from(self.e0_free) } else { 0 }
    }

    pub fn dim(&self) -> usize {
        self.borrow_start() + if self.borrow { 2 } else { 0 }
    }

    fn mu_offset(&self) -> usize {
        usize::from(self.placebo_fixed)
    }
}

/// The objective bound to one dataset (and optionally a historical trial).
#[derive(Clone, Debug)]
pub struct Posterior<T> {
    spec: ObjectiveSpec<T>,
    current: Vec<ArmStats<T>>,
    historical: Vec<ArmStats<T>>,
    sigma_current: T,
    sigma_historical: T,
    layout: Layout,
    // a = b + (1/b − b)·expit(a_centre + a_scale·a')
    a_centre: T,
    a_scale: T,
    fixed_e0: T,
}

impl<T: Scalar> Posterior<T> {
    pub fn new(spec: ObjectiveSpec<T>, current: &TrialDataset<T>, historical: Option<&TrialDataset<T>>) -> Result<Self> {
        spec.priors.validate()?;
        if !(spec.clamp_epsilon > T::zero() && spec.clamp_epsilon <= T::lit(0.01)) {
            return Err(Error::InvalidOptions(format!("clamp epsilon {} outside (0, 0.01]", spec.clamp_epsilon)));
        }
        if !(current.sigma > T::zero()) {
            return Err(Error::InvalidData(format!("sigma = {} must be positive", current.sigma)));
        }
        let current_stats = arm_stats(current, &spec.grid)?;
        let (historical_stats, sigma_historical) = match historical {
            Some(h) => {
                if !(h.sigma > T::zero()) {
                    return Err(Error::InvalidData(format!("historical sigma = {} must be positive", h.sigma)));
                }
                (arm_stats(h, &spec.grid)?, h.sigma)
            }
            None => (Vec::new(), T::one()),
        };
        let theta = spec.kind == ModelKind::SigmoidEmax;
        let (e0_free, fixed_e0) = match spec.priors.theta.e0 {
            E0Prior::Fixed { value } => (false, value),
            E0Prior::Normal { .. } => (theta, T::zero()),
        };
        let layout = Layout {
            n_mu: spec.grid.len(),
            placebo_fixed: spec.placebo == PlaceboMode::FixedZero,
            theta,
            e0_free,
            borrow: historical.is_some(),
        };
        let (b_lo, b_hi) = spec.priors.a_bounds();
        let width = b_hi - b_lo;
        let p0 = (T::one() - b_lo) / width;
        let a_centre = logit(p0);
        // unit change in a' moves a by about η near a = 1
        let a_scale = spec.priors.borrow.eta / (width * p0 * (T::one() - p0));
        Ok(Posterior {
            sigma_current: current.sigma,
            sigma_historical,
            current: current_stats,
            historical: historical_stats,
            layout,
            a_centre,
            a_scale,
            fixed_e0,
            spec,
        })
    }

    pub fn spec(&self) -> &ObjectiveSpec<T> {
        &self.spec
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn borrows(&self) -> bool {
        self.layout.borrow
    }

    /// Log posterior at a point in the original parameterization.
    pub fn value(&self, point: &LatentPoint<T>) -> Result<T> {
        if self.layout.borrow && point.heterogeneity.is_none() {
            return Err(Error::MissingHeterogeneity);
        }
        let prior = log_prior(point, &self.spec)?;
        if prior == T::neg_infinity() {
            return Ok(prior);
        }
        let mut total = prior;
        if let Some(het) = point.heterogeneity.filter(|_| self.layout.borrow) {
            let (lo, hi) = self.spec.priors.a_bounds();
            if !(het.a >= lo && het.a <= hi) {
                return Ok(T::neg_infinity());
            }
            let bp = &self.spec.priors.borrow;
            total = total
                + NormalPrior { mean: T::one(), sd: bp.eta }.log_kernel(het.a)
                + NormalPrior { mean: T::zero(), sd: bp.rho }.log_kernel(het.r);
        }
        let (a, r) = match point.heterogeneity.filter(|_| self.layout.borrow) {
            Some(h) => (h.a, h.r),
            None => (T::one(), T::zero()),
        };
        let two = T::lit(2.0);
        let sc2 = self.sigma_current * self.sigma_current;
        for arm in &self.current {
            let e = arm.mean - point.mu[arm.index] - r;
            total = total - (arm.within_ss + arm.n * e * e) / (two * sc2);
        }
        let sh2 = self.sigma_historical * self.sigma_historical;
        for arm in &self.historical {
            let e = arm.mean - (a * point.mu[arm.index] - r);
            total = total - (arm.within_ss + arm.n * e * e) / (two * sh2);
        }
        Ok(total)
    }

    fn a_bounds(&self) -> (T, T) {
        self.spec.priors.a_bounds()
    }

    /// Maps an unconstrained vector to a point.
    pub fn decode(&self, u: &[T]) -> LatentPoint<T> {
        let l = &self.layout;
        let [lo, hi] = self.spec.priors.mu_support;
        let mut mu = Vec::with_capacity(l.n_mu);
        if l.placebo_fixed {
            mu.push(T::zero());
        }
        mu.extend(u[..l.mu_free()].iter().map(|v| lo + (hi - lo) * expit(*v)));
        let gamma = u[l.gamma()].exp();
        let theta = l.theta.then(|| {
            let t = l.theta_start();
            EmaxParams {
                emax: u[t].exp(),
                ed50: expit(u[t + 1]),
                hill: u[t + 2].exp(),
                e0: if l.e0_free { u[t + 3] } else { self.fixed_e0 },
            }
        });
        let heterogeneity = l.borrow.then(|| {
            let s = l.borrow_start();
            let (b_lo, b_hi) = self.a_bounds();
            Heterogeneity {
                a: b_lo + (b_hi - b_lo) * expit(self.a_centre + self.a_scale * u[s]),
                r: self.spec.priors.borrow.rho * u[s + 1],
            }
        });
        LatentPoint { mu, gamma, theta, heterogeneity }
    }

    /// Maps a point to the unconstrained vector; fails on boundary points.
    pub fn encode(&self, point: &LatentPoint<T>) -> Result<Vec<T>> {
        let l = &self.layout;
        if point.mu.len() != l.n_mu {
            return Err(Error::DimensionMismatch { expected: l.n_mu, got: point.mu.len() });
        }
        let [lo, hi] = self.spec.priors.mu_support;
        let interior = |v: T, a: T, b: T| v > a && v < b;
        let mut u = Vec::with_capacity(l.dim());
        for m in &point.mu[l.mu_offset()..] {
            if !interior(*m, lo, hi) {
                return Err(Error::DegeneratePoint(format!("mu = {m} not inside ({lo}, {hi})")));
            }
            u.push(logit((*m - lo) / (hi - lo)));
        }
        if !(point.gamma > T::zero()) {
            return Err(Error::DegeneratePoint("gamma must be positive".into()));
        }
        u.push(point.gamma.ln());
        if l.theta {
            let theta = point.theta.ok_or_else(|| Error::InvalidTheta("missing theta".into()))?;
            if !(theta.emax > T::zero() && theta.hill > T::zero() && interior(theta.ed50, T::zero(), T::one())) {
                return Err(Error::DegeneratePoint("theta on the boundary of its domain".into()));
            }
            u.push(theta.emax.ln());
            u.push(logit(theta.ed50));
            u.push(theta.hill.ln());
            if l.e0_free {
                u.push(theta.e0);
            }
        }
        if l.borrow {
            let het = point.heterogeneity.ok_or(Error::MissingHeterogeneity)?;
            let (b_lo, b_hi) = self.a_bounds();
            if !interior(het.a, b_lo, b_hi) {
                return Err(Error::DegeneratePoint(format!("a = {} not inside ({b_lo}, {b_hi})", het.a)));
            }
            u.push((logit((het.a - b_lo) / (b_hi - b_lo)) - self.a_centre) / self.a_scale);
            u.push(het.r / self.spec.priors.borrow.rho);
        }
        Ok(u)
    }

    /// Negative log posterior and its gradient in unconstrained coordinates.
    pub fn neg_value_grad(&self, u: &[T], grad: &mut [T]) -> T {
        let l = &self.layout;
        let point = self.decode(u);
        let model = match self.spec.model(point.theta.as_ref()) {
            Some(m) => m,
            None => {
                grad.iter_mut().for_each(|g| *g = T::nan());
                return T::infinity();
            }
        };
        let two = T::lit(2.0);
        let n = l.n_mu;
        let mut z = Vec::with_capacity(n);
        let mut partials = Vec::with_capacity(n);
        for m in &point.mu {
            let p = model.inverse_with_partials(*m);
            z.push(p.value);
            partials.push(p);
        }
        let mut ds2 = vec![T::zero(); n];
        let s2 = curvature::curvature_squared_grad(&z, &self.spec.grid, &mut ds2);
        let gamma = point.gamma;
        let tau = self.spec.priors.tau;
        let sign = self.spec.log_gamma_sign();

        let mut value = -gamma * gamma / (two * tau * tau) + sign * gamma.ln() - s2 / (two * gamma * gamma);
        // ∂F/∂μᵢ in original coordinates
        let pen = -T::one() / (two * gamma * gamma);
        let mut d_mu: Vec<T> = (0..n).map(|i| pen * ds2[i] * partials[i].d_y).collect();
        let d_gamma = -gamma / (tau * tau) + sign / gamma + s2 / (gamma * gamma * gamma);

        let mut d_theta = [T::zero(); 4];
        if let Some(theta) = point.theta {
            let pr = &self.spec.priors.theta;
            value = value + log_theta_prior(&theta, pr);
            let mut acc = [T::zero(); 4];
            for i in 0..n {
                let p = &partials[i];
                let w = pen * ds2[i];
                acc[0] = acc[0] + w * p.d_emax;
                acc[1] = acc[1] + w * p.d_ed50;
                acc[2] = acc[2] + w * p.d_hill;
                acc[3] = acc[3] + w * p.d_e0;
            }
            d_theta[0] = acc[0] + pr.emax.d_log_kernel(theta.emax);
            d_theta[1] = acc[1] + pr.ed50.d_log_kernel(theta.ed50);
            d_theta[2] = acc[2] + (pr.hill.shape - T::one()) / theta.hill - pr.hill.rate();
            d_theta[3] = acc[3]
                + match pr.e0 {
                    E0Prior::Normal { mean, sd } => NormalPrior { mean, sd }.d_log_kernel(theta.e0),
                    E0Prior::Fixed { .. } => T::zero(),
                };
        }

        let (a, r) = point.heterogeneity.map_or((T::one(), T::zero()), |h| (h.a, h.r));
        let mut d_a = T::zero();
        let mut d_r = T::zero();
        let sc2 = self.sigma_current * self.sigma_current;
        for arm in &self.current {
            let e = arm.mean - point.mu[arm.index] - r;
            value = value - (arm.within_ss + arm.n * e * e) / (two * sc2);
            let s = arm.n * e / sc2;
            d_mu[arm.index] = d_mu[arm.index] + s;
            d_r = d_r + s;
        }
        let sh2 = self.sigma_historical * self.sigma_historical;
        for arm in &self.historical {
            let m = point.mu[arm.index];
            let e = arm.mean - (a * m - r);
            value = value - (arm.within_ss + arm.n * e * e) / (two * sh2);
            let s = arm.n * e / sh2;
            d_mu[arm.index] = d_mu[arm.index] + a * s;
            d_a = d_a + m * s;
            d_r = d_r - s;
        }
        if l.borrow {
            let bp = &self.spec.priors.borrow;
            let pa = NormalPrior { mean: T::one(), sd: bp.eta };
            let pr = NormalPrior { mean: T::zero(), sd: bp.rho };
            value = value + pa.log_kernel(a) + pr.log_kernel(r);
            d_a = d_a + pa.d_log_kernel(a);
            d_r = d_r + pr.d_log_kernel(r);
        }

        // chain rule into unconstrained coordinates, negated for minimization
        let [lo, hi] = self.spec.priors.mu_support;
        for (k, g) in grad[..l.mu_free()].iter_mut().enumerate() {
            let i = k + l.mu_offset();
            let s = (point.mu[i] - lo) / (hi - lo);
            *g = -d_mu[i] * (hi - lo) * s * (T::one() - s);
        }
        grad[l.gamma()] = -d_gamma * gamma;
        if let Some(theta) = point.theta {
            let t = l.theta_start();
            grad[t] = -d_theta[0] * theta.emax;
            grad[t + 1] = -d_theta[1] * theta.ed50 * (T::one() - theta.ed50);
            grad[t + 2] = -d_theta[2] * theta.hill;
            if l.e0_free {
                grad[t + 3] = -d_theta[3];
            }
        }
        if l.borrow {
            let s = l.borrow_start();
            let (b_lo, b_hi) = self.a_bounds();
            let p = (a - b_lo) / (b_hi - b_lo);
            grad[s] = -d_a * (b_hi - b_lo) * p * (T::one() - p) * self.a_scale;
            grad[s + 1] = -d_r * self.spec.priors.borrow.rho;
        }
        -value
    }

    /// Per-dose pooled means used to initialize the optimizer: current and
    /// historical responses at the same dose are pooled, and doses without
    /// data are linearly interpolated from their neighbours.
    pub fn pooled_means(&self) -> Vec<T> {
        let n = self.layout.n_mu;
        let mut sum = vec![T::zero(); n];
        let mut count = vec![T::zero(); n];
        for arm in self.current.iter().chain(&self.historical) {
            sum[arm.index] = sum[arm.index] + arm.mean * arm.n;
            count[arm.index] = count[arm.index] + arm.n;
        }
        let known: Vec<(usize, T)> = (0..n)
            .filter(|i| count[*i] > T::zero())
            .map(|i| (i, sum[i] / count[i]))
            .collect();
        let x = self.spec.grid.doses();
        (0..n)
            .map(|i| {
                if let Some((_, v)) = known.iter().find(|(k, _)| *k == i) {
                    return *v;
                }
                let left = known.iter().rev().find(|(k, _)| *k < i);
                let right = known.iter().find(|(k, _)| *k > i);
                match (left, right) {
                    (Some(&(a, va)), Some(&(b, vb))) => va + (vb - va) * (x[i] - x[a]) / (x[b] - x[a]),
                    (Some(&(_, v)), None) | (None, Some(&(_, v))) => v,
                    (None, None) => T::zero(),
                }
            })
            .collect()
    }

    /// Prior-consistent starting point.
    pub fn initial_point(&self) -> LatentPoint<T> {
        let [lo, hi] = self.spec.priors.mu_support;
        let margin = T::lit(0.01) * (hi - lo);
        let mut mu: Vec<T> = self
            .pooled_means()
            .into_iter()
            .map(|m| m.max(lo + margin).min(hi - margin))
            .collect();
        if self.layout.placebo_fixed {
            mu[0] = T::zero();
        }
        let gamma = self.spec.priors.tau * (T::lit(2.0) / T::PI()).sqrt();
        let theta = self.layout.theta.then(|| {
            let pr = &self.spec.priors.theta;
            EmaxParams {
                e0: match pr.e0 {
                    E0Prior::Fixed { value } => value,
                    E0Prior::Normal { mean, .. } => mean,
                },
                emax: pr.emax.mean.max(T::lit(1e-3)),
                ed50: pr.ed50.mean.max(T::lit(0.01)).min(T::lit(0.99)),
                hill: pr.hill.mean(),
            }
        });
        let heterogeneity = self.layout.borrow.then(|| {
            let (b_lo, b_hi) = self.a_bounds();
            Heterogeneity {
                a: T::one().max(b_lo).min(b_hi),
                r: T::zero(),
            }
        });
        LatentPoint { mu, gamma, theta, heterogeneity }
    }
}

//! Scenario engine: simulates trials, fits every requested method and
//! aggregates operating characteristics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{CalibrationCache, CalibrationKey};
use crate::curvature::DoseGrid;
use crate::error::{Error, Result};
use crate::inference::{self, HistoricalNull, MedSpec, NullDesign};
use crate::posterior::{CurvaturePriorSign, ObjectiveSpec, PlaceboMode, Posterior, PriorSet, TrialDataset};
use crate::seeding::{self, Stream};
use crate::shapes::{true_med, ShapeSpec};
use crate::solver::{map_fit_posterior, MapFit, SolverOptions};
use crate::transform::{ModelKind, RangePolicy};
use crate::trials::{generate_current_trial, generate_historical_trial, Scenario, TrialDesign, TrueCurve};

/// One analysis method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub kind: ModelKind,
    /// Scale of the hyperprior on γ.
    pub tau: f64,
    /// Borrow from the historical trial when the scenario has one.
    pub borrow: bool,
}

impl MethodSpec {
    pub fn semap(borrow: bool) -> Self {
        MethodSpec { kind: ModelKind::SigmoidEmax, tau: 0.5, borrow }
    }

    pub fn limap() -> Self {
        MethodSpec { kind: ModelKind::Identity, tau: 3.0, borrow: false }
    }

    pub fn label(&self, scenario: Scenario) -> String {
        let name = self.kind.method_name();
        if self.borrows_in(scenario) {
            format!("{name}-S{}", scenario.number())
        } else if self.kind == ModelKind::SigmoidEmax {
            format!("{name}-S4")
        } else {
            name.to_owned()
        }
    }

    pub fn borrows_in(&self, scenario: Scenario) -> bool {
        self.borrow && scenario.has_historical()
    }
}

/// Analysis settings shared by all methods of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    /// Priors; `tau` is overridden per method.
    pub priors: PriorSet<f64>,
    pub curvature_sign: CurvaturePriorSign,
    pub placebo: PlaceboMode,
    pub clamp_epsilon: f64,
    pub range_policy: RangePolicy,
    pub solver: SolverOptions<f64>,
    pub med: MedSpec<f64>,
    pub alpha: f64,
    pub calibration_replicates: usize,
    pub calibration_seed: u64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            priors: PriorSet::standard(0.5),
            curvature_sign: CurvaturePriorSign::PlusLogGamma,
            placebo: PlaceboMode::Estimated,
            clamp_epsilon: crate::transform::DEFAULT_CLAMP_EPSILON,
            range_policy: RangePolicy::Extend,
            solver: SolverOptions::default(),
            med: MedSpec::default(),
            alpha: 0.05,
            calibration_replicates: 1000,
            calibration_seed: 20_240_601,
        }
    }
}

/// Union of the current design doses and, when borrowing, the scenario's
/// historical doses.
pub fn analysis_grid(design: &TrialDesign, scenario: Scenario, borrow: bool) -> Result<DoseGrid<f64>> {
    let mut doses = design.doses.clone();
    if borrow {
        doses.extend_from_slice(scenario.historical_doses());
    }
    doses.sort_by(|a, b| a.partial_cmp(b).expect("finite doses"));
    doses.dedup();
    DoseGrid::new(doses)
}

impl AnalysisSettings {
    pub fn objective(&self, method: &MethodSpec, design: &TrialDesign, scenario: Scenario) -> Result<ObjectiveSpec<f64>> {
        let grid = analysis_grid(design, scenario, method.borrows_in(scenario))?;
        let priors = PriorSet { tau: method.tau, ..self.priors };
        priors.validate()?;
        Ok(ObjectiveSpec {
            grid,
            kind: method.kind,
            priors,
            curvature_sign: self.curvature_sign,
            placebo: self.placebo,
            clamp_epsilon: self.clamp_epsilon,
            range_policy: self.range_policy,
        })
    }

    /// Calibration key of `method` under the given design and heterogeneity.
    pub fn calibration_key(
        &self,
        method: &MethodSpec,
        design: &TrialDesign,
        scenario: Scenario,
        a: f64,
        r: f64,
    ) -> Result<CalibrationKey> {
        let historical = method.borrows_in(scenario).then_some(HistoricalNull { scenario, a, r });
        Ok(CalibrationKey {
            null: NullDesign { design: design.clone(), historical },
            spec: self.objective(method, design, scenario)?,
            solver: self.solver,
            alpha: self.alpha,
            replicates: self.calibration_replicates,
            seed: self.calibration_seed,
        })
    }
}

/// One simulated scenario cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub curve: TrueCurve,
    /// True predictive scale of the historical trial.
    pub a: f64,
    /// True prognostic shift of the historical trial.
    pub r: f64,
    pub replicates: usize,
    pub master_seed: u64,
    pub methods: Vec<MethodSpec>,
    pub design: TrialDesign,
    pub analysis: AnalysisSettings,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        if self.methods.is_empty() {
            return Err(Error::InvalidScenario("no methods requested".into()));
        }
        if !(self.a.is_finite() && self.r.is_finite()) {
            return Err(Error::InvalidScenario("heterogeneity must be finite".into()));
        }
        self.analysis.solver.validate()?;
        Ok(())
    }

    /// True MED of the data-generating curve, if it reaches the threshold.
    pub fn true_med(&self) -> Option<f64> {
        match self.curve {
            TrueCurve::Null => None,
            TrueCurve::Shape(s) => true_med(&s, self.analysis.med.delta).ok(),
        }
    }

    /// The same cell under the flat null, with its own master seed.
    pub fn null_counterpart(&self) -> ScenarioConfig {
        ScenarioConfig {
            curve: TrueCurve::Null,
            master_seed: seeding::mix(self.master_seed, 0, Stream::NullSet),
            ..self.clone()
        }
    }

    pub fn shape(&self) -> Option<ShapeSpec> {
        match self.curve {
            TrueCurve::Null => None,
            TrueCurve::Shape(s) => Some(s),
        }
    }
}

/// One fitted replicate of one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub method: String,
    pub replicate: usize,
    pub seed: u64,
    pub statistic: f64,
    pub poc: bool,
    pub mu_hat: Vec<f64>,
    pub med: Option<f64>,
    pub gamma_hat: f64,
    pub a_hat: Option<f64>,
    pub r_hat: Option<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the fit failed outright; numeric fields are then NaN.
    pub error: Option<String>,
}

/// Bias and MSE of MED estimates over replicates that reached the threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedMetrics {
    /// `None` when no replicate reached the threshold.
    pub bias: Option<f64>,
    pub mse: Option<f64>,
    pub n_reached: usize,
    pub n_not_reached: usize,
}

pub fn med_metrics(meds: &[Option<f64>], true_med: f64) -> MedMetrics {
    let reached: Vec<f64> = meds.iter().flatten().copied().collect();
    let n = reached.len();
    let (bias, mse) = if n == 0 {
        (None, None)
    } else {
        let nf = n as f64;
        (
            Some(reached.iter().map(|m| m - true_med).sum::<f64>() / nf),
            Some(reached.iter().map(|m| (m - true_med).powi(2)).sum::<f64>() / nf),
        )
    };
    MedMetrics { bias, mse, n_reached: n, n_not_reached: meds.len() - n }
}

/// Aggregated operating characteristics of one method in one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub scenario: u8,
    pub replicates: usize,
    pub critical_value: f64,
    /// Fraction of replicates with `T > c`.
    pub poc_rate: f64,
    pub true_med: Option<f64>,
    pub med: Option<MedMetrics>,
    pub doses: Vec<f64>,
    pub mu_mean: Vec<f64>,
    /// Standard deviation of μ̂ across replicates, per dose.
    pub mu_se: Vec<f64>,
    pub n_failed: usize,
    pub n_not_converged: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutput {
    pub records: Vec<TrialRecord>,
    pub metrics: Vec<MetricsRow>,
}

impl ScenarioOutput {
    /// Records of the method with the given label, in replicate order.
    pub fn method_records(&self, label: &str) -> Vec<&TrialRecord> {
        self.records.iter().filter(|r| r.method == label).collect()
    }

    pub fn statistics(&self, label: &str) -> Vec<f64> {
        self.method_records(label).iter().map(|r| r.statistic).collect()
    }
}

fn record_from_fit(
    method: String,
    replicate: usize,
    seed: u64,
    fit: Result<MapFit<f64>>,
    c: f64,
    med: &MedSpec<f64>,
) -> TrialRecord {
    match fit {
        Ok(fit) => {
            let statistic = inference::test_statistic(&fit);
            TrialRecord {
                method,
                replicate,
                seed,
                statistic,
                poc: statistic > c,
                med: inference::estimate_med(&fit, med).ok().and_then(|m| m.dose()),
                gamma_hat: fit.gamma_hat,
                a_hat: fit.heterogeneity_hat.map(|h| h.a),
                r_hat: fit.heterogeneity_hat.map(|h| h.r),
                objective: fit.objective,
                converged: fit.converged,
                iterations: fit.iterations,
                mu_hat: fit.mu_hat,
                error: None,
            }
        }
        Err(e) => TrialRecord {
            method,
            replicate,
            seed,
            statistic: f64::NAN,
            poc: false,
            mu_hat: Vec::new(),
            med: None,
            gamma_hat: f64::NAN,
            a_hat: None,
            r_hat: None,
            objective: f64::NAN,
            converged: false,
            iterations: 0,
            error: Some(e.to_string()),
        },
    }
}

/// Per-replicate simulated data.
pub fn replicate_data(config: &ScenarioConfig, replicate: usize) -> Result<(TrialDataset<f64>, Option<TrialDataset<f64>>)> {
    let i = replicate as u64;
    let current = generate_current_trial(&config.curve, &config.design, seeding::mix(config.master_seed, i, Stream::CurrentTrial))?;
    let needs_history = config.methods.iter().any(|m| m.borrows_in(config.scenario));
    let historical = if needs_history {
        Some(generate_historical_trial(
            &config.curve,
            config.scenario,
            config.a,
            config.r,
            &config.design,
            seeding::mix(config.master_seed, i, Stream::HistoricalTrial),
        )?)
    } else {
        None
    };
    Ok((current, historical))
}

/// Critical values of every method of `config`, calibrating as needed.
pub fn critical_values(config: &ScenarioConfig, cache: &CalibrationCache) -> Result<Vec<f64>> {
    config
        .methods
        .iter()
        .map(|m| {
            let key = config.analysis.calibration_key(m, &config.design, config.scenario, config.a, config.r)?;
            Ok(cache.get_or_calibrate(&key)?.0.critical_value)
        })
        .collect()
}

/// Runs all replicates of a cell with the given critical values (one per
/// method).
pub fn run_with_critical_values(config: &ScenarioConfig, critical: &[f64]) -> Result<ScenarioOutput> {
    config.validate()?;
    if critical.len() != config.methods.len() {
        return Err(Error::DimensionMismatch { expected: config.methods.len(), got: critical.len() });
    }
    let specs = config
        .methods
        .iter()
        .map(|m| config.analysis.objective(m, &config.design, config.scenario))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = config.methods.iter().map(|m| m.label(config.scenario)).collect();
    let per_replicate: Vec<Vec<TrialRecord>> = (0..config.replicates)
        .into_par_iter()
        .map(|i| {
            let (current, historical) = replicate_data(config, i)?;
            let solver_seed = seeding::mix(config.master_seed, i as u64, Stream::Solver);
            let opts = SolverOptions { seed: solver_seed, ..config.analysis.solver };
            Ok(config
                .methods
                .iter()
                .enumerate()
                .map(|(k, m)| {
                    let hist = historical.as_ref().filter(|_| m.borrows_in(config.scenario));
                    let fit = Posterior::new(specs[k].clone(), &current, hist)
                        .and_then(|p| map_fit_posterior(&p, &opts));
                    record_from_fit(labels[k].clone(), i, solver_seed, fit, critical[k], &config.analysis.med)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut records: Vec<TrialRecord> = Vec::with_capacity(config.replicates * config.methods.len());
    // method-major order
    for k in 0..config.methods.len() {
        records.extend(per_replicate.iter().map(|rs| rs[k].clone()));
    }
    let metrics = if config.replicates == 0 {
        Vec::new()
    } else {
        labels
            .iter()
            .enumerate()
            .map(|(k, label)| metrics_row(config, label, specs[k].grid.doses(), critical[k], &records))
            .collect()
    };
    Ok(ScenarioOutput { records, metrics })
}

/// Calibrates (through `cache`) and runs a cell.
pub fn run_scenario(config: &ScenarioConfig, cache: &CalibrationCache) -> Result<ScenarioOutput> {
    config.validate()?;
    if config.replicates == 0 {
        return Ok(ScenarioOutput { records: Vec::new(), metrics: Vec::new() });
    }
    let critical = critical_values(config, cache)?;
    run_with_critical_values(config, &critical)
}

fn metrics_row(config: &ScenarioConfig, label: &str, doses: &[f64], c: f64, records: &[TrialRecord]) -> MetricsRow {
    let rs: Vec<&TrialRecord> = records.iter().filter(|r| r.method == label).collect();
    let ok: Vec<&&TrialRecord> = rs.iter().filter(|r| r.error.is_none()).collect();
    let n = ok.len() as f64;
    let m = doses.len();
    let mut mean = vec![0.0; m];
    for r in &ok {
        for (acc, v) in mean.iter_mut().zip(&r.mu_hat) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut se = vec![0.0; m];
    if ok.len() > 1 {
        for r in &ok {
            for ((acc, v), mu) in se.iter_mut().zip(&r.mu_hat).zip(&mean) {
                *acc += (v - mu).powi(2);
            }
        }
        se.iter_mut().for_each(|v| *v = (*v / (n - 1.0)).sqrt());
    } else {
        se.iter_mut().for_each(|v| *v = f64::NAN);
    }
    let true_med = config.true_med();
    let med = true_med.map(|t| {
        let meds: Vec<Option<f64>> = ok.iter().map(|r| r.med).collect();
        med_metrics(&meds, t)
    });
    MetricsRow {
        method: label.to_owned(),
        scenario: config.scenario.number(),
        replicates: rs.len(),
        critical_value: c,
        poc_rate: rs.iter().filter(|r| r.poc).count() as f64 / rs.len() as f64,
        true_med,
        med,
        doses: doses.to_vec(),
        mu_mean: mean,
        mu_se: se,
        n_failed: rs.len() - ok.len(),
        n_not_converged: ok.iter().filter(|r| !r.converged).count(),
    }
}

/// One point of an ROC curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub c: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve of the test `T > c`.
///
/// Without an explicit `c_grid` every observed statistic is used as a
/// threshold. The `(0, 0)` and `(1, 1)` endpoints are always included and
/// points are sorted by FPR, then TPR.
pub fn roc_curve(null: &[f64], alt: &[f64], c_grid: Option<&[f64]>) -> Result<Vec<RocPoint>> {
    if null.is_empty() {
        return Err(Error::EmptyRecords("null".into()));
    }
    if alt.is_empty() {
        return Err(Error::EmptyRecords("alternative".into()));
    }
    let mut cs: Vec<f64> = match c_grid {
        Some(g) => g.to_vec(),
        None => null.iter().chain(alt).copied().collect(),
    };
    cs.retain(|c| !c.is_nan());
    cs.sort_by(|a, b| b.partial_cmp(a).expect("not NaN"));
    cs.dedup();
    let mut points = vec![RocPoint { c: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    points.extend(cs.iter().map(|&c| RocPoint {
        c,
        fpr: inference::rejection_rate(null, c),
        tpr: inference::rejection_rate(alt, c),
    }));
    points.push(RocPoint { c: f64::NEG_INFINITY, fpr: 1.0, tpr: 1.0 });
    // descending c already orders both rates; the sort only fixes ties
    points.sort_by(|a, b| {
        a.fpr
            .partial_cmp(&b.fpr)
            .expect("finite")
            .then(a.tpr.partial_cmp(&b.tpr).expect("finite"))
            .then(b.c.partial_cmp(&a.c).expect("not NaN"))
    });
    Ok(points)
}

/// Largest TPR among points with FPR at most `target`.
pub fn tpr_at_fpr(points: &[RocPoint], target: f64) -> f64 {
    points.iter().filter(|p| p.fpr <= target).map(|p| p.tpr).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::{standard_shape, ShapeFamily};

    fn config(replicates: usize) -> ScenarioConfig {
        ScenarioConfig {
            scenario: Scenario::S4,
            curve: TrueCurve::Shape(standard_shape(ShapeFamily::Emax2)),
            a: 1.0,
            r: 0.0,
            replicates,
            master_seed: 7,
            methods: vec![MethodSpec::semap(false), MethodSpec::limap()],
            design: TrialDesign::default(),
            analysis: AnalysisSettings::default(),
        }
    }

    #[test]
    fn med_metrics_examples() {
        let m = med_metrics(&[Some(0.6), Some(0.6)], 0.6);
        assert_eq!((m.bias, m.mse), (Some(0.0), Some(0.0)));
        let m = med_metrics(&[Some(0.5), Some(0.7), None], 0.6);
        assert!(m.bias.unwrap().abs() < 1e-12);
        assert!((m.mse.unwrap() - 0.01).abs() < 1e-12);
        assert_eq!(m.n_not_reached, 1);
        let m = med_metrics(&[None, None], 0.6);
        assert_eq!(m.bias, None);
        assert_eq!(m.n_not_reached, 2);
    }

    #[test]
    fn roc_examples() {
        let null: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let pts = roc_curve(&null, &null, None).unwrap();
        assert!(pts.iter().all(|p| (p.fpr - p.tpr).abs() < 1e-12));
        assert_eq!(pts.first().map(|p| (p.fpr, p.tpr)), Some((0.0, 0.0)));
        assert_eq!(pts.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
        let alt: Vec<f64> = null.iter().map(|t| t + 10.0).collect();
        let pts = roc_curve(&null, &alt, None).unwrap();
        assert_eq!(tpr_at_fpr(&pts, 0.05), 1.0);
        assert!(roc_curve(&[], &alt, None).is_err());
    }

    #[test]
    fn roc_rates_nonincreasing_in_c() {
        let null = [0.1, 0.4, 0.2, 0.3, 0.35];
        let alt = [0.5, 0.2, 0.45, 0.3];
        let mut pts = roc_curve(&null, &alt, None).unwrap();
        pts.sort_by(|a, b| a.c.partial_cmp(&b.c).unwrap());
        for w in pts.windows(2) {
            assert!(w[1].fpr <= w[0].fpr && w[1].tpr <= w[0].tpr);
        }
    }

    #[test]
    fn zero_replicates_is_empty() {
        let out = run_scenario(&config(0), &CalibrationCache::in_memory()).unwrap();
        assert!(out.records.is_empty() && out.metrics.is_empty());
    }

    #[test]
    fn run_is_reproducible() {
        let cfg = config(6);
        let a = run_with_critical_values(&cfg, &[0.2, 0.2]).unwrap();
        let b = run_with_critical_values(&cfg, &[0.2, 0.2]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 12);
        assert_eq!(a.metrics.len(), 2);
        assert_eq!(a.metrics[0].method, "SEMAP-S4");
        assert_eq!(a.metrics[1].method, "LiMAP");
    }

    #[test]
    fn scenario_four_ignores_borrowing() {
        let mut cfg = config(2);
        cfg.methods = vec![MethodSpec::semap(true)];
        let (_, hist) = replicate_data(&cfg, 0).unwrap();
        assert!(hist.is_none());
        cfg.scenario = Scenario::S3;
        let (_, hist) = replicate_data(&cfg, 0).unwrap();
        assert_eq!(hist.unwrap().doses(), &[0.0, 0.8, 1.0]);
        let g = analysis_grid(&cfg.design, Scenario::S2, true).unwrap();
        assert_eq!(g.doses(), &[0.0, 0.15, 0.2, 0.5, 0.8, 1.0]);
    }

    #[test]
    fn current_data_shared_across_scenarios() {
        let mut a = config(1);
        a.methods = vec![MethodSpec::semap(true)];
        let mut b = a.clone();
        b.scenario = Scenario::S1;
        assert_eq!(replicate_data(&a, 0).unwrap().0, replicate_data(&b, 0).unwrap().0);
    }
}

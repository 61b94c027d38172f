//! `dosecurve`: calibration, fitting and simulation from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
//! error.

mod config;
mod data;
mod output;

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dosecurve_core::cache::CalibrationCache;
use dosecurve_core::curvature::DoseGrid;
use dosecurve_core::harness::{roc_curve, run_with_critical_values, MethodSpec, RocPoint};
use dosecurve_core::inference::{self, Med};
use dosecurve_core::posterior::{ObjectiveSpec, PriorSet};
use dosecurve_core::shapes::{ShapeManifest, DEFAULT_THRESHOLD};
use dosecurve_core::solver::{map_fit, MapFit, SolverOptions};
use dosecurve_core::transform::EmaxParams;
use dosecurve_core::trials::{Scenario, TrialDesign};
use serde::Serialize;

use config::{Overrides, RunConfig};
use output::{Cell, CriticalValueEntry, Manifest};

/// Error with its process exit code.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn config(e: impl Display) -> Self {
        CliError { code: 2, message: format!("config error: {e}") }
    }

    pub fn data(e: impl Display) -> Self {
        CliError { code: 3, message: format!("data error: {e}") }
    }

    pub fn runtime(e: impl Display) -> Self {
        CliError { code: 4, message: format!("error: {e}") }
    }

    pub fn code(&self) -> u8 {
        self.code
    }
}

const CACHE_ENV: &str = "DOSECURVE_CACHE_DIR";

#[derive(Parser, Debug)]
#[command(name = "dosecurve", version, about = "Curvature-penalized MAP dose-response estimation and trial simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Calibrate the twelve true shapes and write their manifest.
    CalibrateShapes(ShapesArgs),
    /// Calibrate PoC critical values for the configured methods.
    Calibrate(Overrides),
    /// Fit the configured methods to a trial CSV.
    Fit(FitArgs),
    /// Simulate a scenario cell; writes records, metrics, ROC and a manifest.
    Simulate(Overrides),
    /// ROC curves from null and alternative record files.
    Roc(RocArgs),
    /// Summarize the outputs of a simulation directory.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct ShapesArgs {
    /// Clinical relevance threshold.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value = "manifests/shapes.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// CSV with columns dose, response and optionally trial.
    #[arg(long)]
    data: PathBuf,
    /// JSON report path; defaults to fit.json in the output directory.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RocArgs {
    /// Records simulated under the null.
    #[arg(long)]
    null: PathBuf,
    /// Records simulated under the alternative.
    #[arg(long)]
    alt: PathBuf,
    /// Externally produced comparator records: columns method, arm (null or alt), statistic.
    #[arg(long)]
    external: Vec<PathBuf>,
    #[arg(long, default_value = "roc.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Output directory of `dosecurve simulate`.
    #[arg(long)]
    dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::CalibrateShapes(a) => calibrate_shapes(&a),
        Command::Calibrate(o) => with_threads(o.threads, || calibrate(&o)),
        Command::Fit(a) => with_threads(a.overrides.threads, || fit(&a)),
        Command::Simulate(o) => with_threads(o.threads, || simulate(&o)),
        Command::Roc(a) => roc(&a),
        Command::Report(a) => report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn with_threads(threads: Option<usize>, run: impl FnOnce() -> Result<(), CliError> + Send) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(CliError::runtime)?;
    pool.install(run)
}

fn cache() -> CalibrationCache {
    let dir = std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".dosecurve-cache"));
    CalibrationCache::with_dir(dir)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(CliError::runtime)? + "\n";
    fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn calibrate_shapes(args: &ShapesArgs) -> Result<(), CliError> {
    if !(args.threshold > 0.0 && args.threshold < 0.5) {
        return Err(CliError::config(format!("threshold {} must lie in (0, 0.5)", args.threshold)));
    }
    let manifest = ShapeManifest::calibrate_all(args.threshold).map_err(CliError::runtime)?;
    write_json(&args.out, &manifest)?;
    println!("{:<13} {:>10} {:>12}", "family", "target MED", "achieved MED");
    for e in &manifest.shapes {
        println!("{:<13} {:>10.3} {:>12.6}", e.family.name(), e.target_med, e.achieved_med);
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct CalibrationReport {
    config_hash: String,
    method: String,
    critical_value: f64,
    calibration_rate: f64,
    alpha: f64,
    replicates: usize,
    seed: u64,
    fingerprint: String,
    cache_file: Option<PathBuf>,
}

fn calibrate(flags: &Overrides) -> Result<(), CliError> {
    let config = RunConfig::resolve(flags)?;
    let hash = config.hash()?;
    let cache = cache();
    let scenario = config.scenario()?;
    let mut reports = Vec::new();
    for method in config.method_specs()? {
        let label = method.label(scenario);
        let key = config
            .analysis
            .calibration_key(&method, &config.design, scenario, config.scenario.a, config.scenario.r)
            .map_err(CliError::config)?;
        let (entry, reused) = cache.get_or_calibrate(&key).map_err(CliError::runtime)?;
        if reused {
            eprintln!("{label}: reusing cached calibration {}", entry.fingerprint);
        }
        println!(
            "{label}: c = {} (null rejection rate {:.4}, alpha {}, R = {})",
            entry.critical_value, entry.calibration_rate, entry.alpha, entry.replicates
        );
        reports.push(CalibrationReport {
            config_hash: hash.clone(),
            method: label,
            critical_value: entry.critical_value,
            calibration_rate: entry.calibration_rate,
            alpha: entry.alpha,
            replicates: entry.replicates,
            seed: entry.seed,
            cache_file: cache.path_for(&entry.fingerprint),
            fingerprint: entry.fingerprint,
        });
    }
    let path = config.output_dir().join("calibration.json");
    write_json(&path, &reports)?;
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct FitReport {
    config_hash: String,
    method: String,
    doses: Vec<f64>,
    mu_hat: Vec<f64>,
    gamma_hat: f64,
    theta_hat: Option<EmaxParams<f64>>,
    a_hat: Option<f64>,
    r_hat: Option<f64>,
    objective: f64,
    converged: bool,
    iterations: usize,
    statistic: f64,
    critical_value: Option<f64>,
    poc: Option<bool>,
    med_delta: f64,
    /// `None` when no dose reaches the threshold.
    med: Option<f64>,
}

/// Scenario whose historical dose set matches the data, if any.
fn matching_scenario(historical: &[f64]) -> Option<Scenario> {
    let mut h = historical.to_vec();
    h.sort_by(|a, b| a.partial_cmp(b).expect("finite doses"));
    [Scenario::S1, Scenario::S2, Scenario::S3].into_iter().find(|s| s.historical_doses() == h.as_slice())
}

fn fit(args: &FitArgs) -> Result<(), CliError> {
    let config = RunConfig::resolve(&args.overrides)?;
    let hash = config.hash()?;
    let trial = data::load(&args.data, config.design.sigma)?;
    if !(config.design.sigma > 0.0) {
        return Err(CliError::config("sigma must be positive to fit"));
    }
    let cache = cache();
    let mut reports = Vec::new();
    for method in config.method_specs()? {
        let historical = if method.borrow {
            Some(trial.historical.as_ref().ok_or_else(|| {
                CliError::data(format!(
                    "{} borrowing requested but {} has no rows with trial = historical",
                    method.kind.method_name(),
                    args.data.display()
                ))
            })?)
        } else {
            None
        };
        let scenario = match historical {
            Some(h) => matching_scenario(h.doses()),
            None => Some(Scenario::S4),
        };
        let label = match scenario {
            Some(s) => method.label(s),
            None => format!("{}-borrow", method.kind.method_name()),
        };
        let grid = DoseGrid::new(trial.doses(method.borrow)).map_err(CliError::data)?;
        let spec = ObjectiveSpec {
            grid,
            kind: method.kind,
            priors: PriorSet { tau: method.tau, ..config.analysis.priors },
            curvature_sign: config.analysis.curvature_sign,
            placebo: config.analysis.placebo,
            clamp_epsilon: config.analysis.clamp_epsilon,
            range_policy: config.analysis.range_policy,
        };
        let opts = SolverOptions { seed: config.seed, ..config.analysis.solver };
        let fit = map_fit(&spec, &trial.current, historical, &opts).map_err(CliError::runtime)?;
        let critical = lookup_critical(&config, &cache, &method, scenario, &trial);
        if critical.is_none() {
            eprintln!(
                "warning: no cached critical value for {label} on this design; run `dosecurve calibrate` with a matching design. PoC omitted."
            );
        }
        reports.push(fit_report(&config, &hash, label, &fit, critical)?);
    }
    for r in &reports {
        print_fit(r);
    }
    let path = args.report.clone().unwrap_or_else(|| config.output_dir().join("fit.json"));
    write_json(&path, &reports)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Cached critical value for the data's design, without calibrating.
fn lookup_critical(
    config: &RunConfig,
    cache: &CalibrationCache,
    method: &MethodSpec,
    scenario: Option<Scenario>,
    trial: &data::TrialData,
) -> Option<f64> {
    let design = TrialDesign {
        doses: trial.current.doses().to_vec(),
        n_per_arm: trial.balanced_arm_size()?,
        sigma: config.design.sigma,
    };
    let key = config.analysis.calibration_key(method, &design, scenario?, config.scenario.a, config.scenario.r).ok()?;
    cache.lookup(&key.fingerprint().ok()?).map(|e| e.critical_value)
}

fn fit_report(config: &RunConfig, hash: &str, method: String, fit: &MapFit<f64>, c: Option<f64>) -> Result<FitReport, CliError> {
    let statistic = inference::test_statistic(fit);
    let med = match inference::estimate_med(fit, &config.analysis.med).map_err(CliError::runtime)? {
        Med::Dose(d) => Some(d),
        Med::NotReached => None,
    };
    Ok(FitReport {
        config_hash: hash.to_owned(),
        method,
        doses: fit.doses.clone(),
        mu_hat: fit.mu_hat.clone(),
        gamma_hat: fit.gamma_hat,
        theta_hat: fit.theta_hat,
        a_hat: fit.heterogeneity_hat.map(|h| h.a),
        r_hat: fit.heterogeneity_hat.map(|h| h.r),
        objective: fit.objective,
        converged: fit.converged,
        iterations: fit.iterations,
        statistic,
        critical_value: c,
        poc: c.map(|c| inference::detect_poc(fit, c)),
        med_delta: config.analysis.med.delta,
        med,
    })
}

fn print_fit(r: &FitReport) {
    println!("== {} ==", r.method);
    println!("  {:>6}  {:>9}", "dose", "mu_hat");
    for (d, m) in r.doses.iter().zip(&r.mu_hat) {
        println!("  {d:>6.3}  {m:>9.5}");
    }
    println!("  gamma_hat = {:.5}", r.gamma_hat);
    if let Some(t) = r.theta_hat {
        println!("  theta_hat: E0 = {:.4}, Emax = {:.4}, ED50 = {:.4}, hill = {:.4}", t.e0, t.emax, t.ed50, t.hill);
    }
    if let (Some(a), Some(rr)) = (r.a_hat, r.r_hat) {
        println!("  a_hat = {a:.5}, r_hat = {rr:.5}");
    }
    println!("  log posterior = {:.6} (converged: {}, iterations: {})", r.objective, r.converged, r.iterations);
    match (r.critical_value, r.poc) {
        (Some(c), Some(p)) => println!("  T = {:.5}, c = {c:.5}, PoC: {}", r.statistic, if p { "yes" } else { "no" }),
        _ => println!("  T = {:.5}, PoC: not evaluated (no calibration)", r.statistic),
    }
    match r.med {
        Some(m) => println!("  MED (delta {}) = {m:.4}", r.med_delta),
        None => println!("  MED (delta {}) = not reached", r.med_delta),
    }
}

fn simulate(flags: &Overrides) -> Result<(), CliError> {
    let config = RunConfig::resolve(flags)?;
    let hash = config.hash()?;
    let dir = config.output_dir();
    if let Some(m) = Manifest::read(&dir) {
        if m.config_hash == hash && m.files_intact(&dir) {
            eprintln!("outputs in {} match config hash {hash}; nothing to recompute", dir.display());
            return Ok(());
        }
    }
    let cell = config.scenario_config()?;
    let cache = cache();
    let mut critical = Vec::new();
    let mut entries = Vec::new();
    for method in &cell.methods {
        let key = cell
            .analysis
            .calibration_key(method, &cell.design, cell.scenario, cell.a, cell.r)
            .map_err(CliError::config)?;
        let (entry, reused) = cache.get_or_calibrate(&key).map_err(CliError::runtime)?;
        let label = method.label(cell.scenario);
        if reused {
            eprintln!("{label}: reusing cached calibration {}", entry.fingerprint);
        }
        critical.push(entry.critical_value);
        entries.push(CriticalValueEntry { method: label, critical_value: entry.critical_value, fingerprint: entry.fingerprint });
    }
    let out = run_with_critical_values(&cell, &critical).map_err(CliError::runtime)?;
    let curves = if config.output.roc && cell.replicates > 0 {
        let null = run_with_critical_values(&cell.null_counterpart(), &critical).map_err(CliError::runtime)?;
        let mut curves = BTreeMap::new();
        for e in &entries {
            let pts = roc_curve(&finite(null.statistics(&e.method)), &finite(out.statistics(&e.method)), None)
                .map_err(CliError::runtime)?;
            curves.insert(e.method.clone(), pts);
        }
        Some(curves)
    } else {
        None
    };
    create_dir(&dir)?;
    output::write_records(&dir.join(output::RECORDS), &hash, &out.records)?;
    let shape = config.scenario.shape.clone();
    let cell_desc = Cell { shape: &shape, a: cell.a, r: cell.r };
    output::write_metrics(&dir.join(output::METRICS), &hash, &cell_desc, &out.metrics, curves.as_ref())?;
    let mut names = vec![output::RECORDS, output::METRICS];
    if let Some(c) = &curves {
        output::write_roc(&dir.join(output::ROC), &hash, c)?;
        names.push(output::ROC);
    }
    let files = names
        .iter()
        .map(|n| Ok((n.to_string(), output::sha256_file(&dir.join(n))?)))
        .collect::<Result<BTreeMap<_, _>, CliError>>()?;
    Manifest {
        config_hash: hash.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        seed: config.seed,
        config: serde_json::to_value(&config).map_err(CliError::runtime)?,
        critical_values: entries,
        files,
    }
    .write(&dir)?;
    print_metrics(&out.metrics, curves.as_ref());
    println!("wrote {} (config hash {hash})", dir.display());
    Ok(())
}

fn finite(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().filter(|t| !t.is_nan()).collect()
}

fn print_metrics(metrics: &[dosecurve_core::harness::MetricsRow], curves: Option<&BTreeMap<String, Vec<RocPoint>>>) {
    println!(
        "{:<10} {:>8} {:>8} {:>9} {:>9} {:>9} {:>6} {:>6}",
        "method", "c", "PoC", "TPR@.05", "MED bias", "MED MSE", "n/r", "n/c"
    );
    for m in metrics {
        let tpr = curves.and_then(|c| c.get(&m.method)).map(|p| dosecurve_core::harness::tpr_at_fpr(p, 0.05));
        let f = |v: Option<f64>| v.map_or("-".to_owned(), |v| format!("{v:.4}"));
        println!(
            "{:<10} {:>8.4} {:>8.3} {:>9} {:>9} {:>9} {:>6} {:>6}",
            m.method,
            m.critical_value,
            m.poc_rate,
            f(tpr),
            f(m.med.and_then(|x| x.bias)),
            f(m.med.and_then(|x| x.mse)),
            m.med.map_or("-".to_owned(), |x| x.n_not_reached.to_string()),
            m.n_not_converged
        );
    }
}

fn roc(args: &RocArgs) -> Result<(), CliError> {
    let (hash_null, mut null) = output::read_statistics(&args.null)?;
    let (hash_alt, mut alt) = output::read_statistics(&args.alt)?;
    for path in &args.external {
        for row in output::read_table(path)? {
            let get = |k: &str| row.get(k).cloned().ok_or_else(|| CliError::data(format!("{}: missing column `{k}`", path.display())));
            let method = get("method")?;
            let text = get("statistic")?;
            let v: f64 = text
                .trim()
                .parse()
                .map_err(|_| CliError::data(format!("{}: statistic `{text}` is not a number", path.display())))?;
            match get("arm")?.as_str() {
                "null" => null.entry(method).or_default().push(v),
                "alt" => alt.entry(method).or_default().push(v),
                other => return Err(CliError::data(format!("{}: arm `{other}` (expected null or alt)", path.display()))),
            }
        }
    }
    let mut curves = BTreeMap::new();
    for (method, stats) in &alt {
        match null.get(method) {
            Some(n) if !n.is_empty() && !stats.is_empty() => {
                curves.insert(method.clone(), roc_curve(n, stats, None).map_err(CliError::data)?);
            }
            _ => eprintln!("warning: {method} has no null records; skipped"),
        }
    }
    if curves.is_empty() {
        return Err(CliError::data("no method has both null and alternative records"));
    }
    let hash = hash_alt.or(hash_null).unwrap_or_default();
    output::write_roc(&args.out, &hash, &curves)?;
    for (method, pts) in &curves {
        println!("{method}: TPR at FPR 0.05 = {:.4}", dosecurve_core::harness::tpr_at_fpr(pts, 0.05));
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn report(args: &ReportArgs) -> Result<(), CliError> {
    let metrics_path = args.dir.join(output::METRICS);
    if !metrics_path.exists() {
        return Err(CliError::data(format!("{} not found; run `dosecurve simulate` first", metrics_path.display())));
    }
    let rows = output::read_table(&metrics_path)?;
    let mut text = String::new();
    let manifest = Manifest::read(&args.dir);
    if let Some(m) = &manifest {
        text += &format!("config hash `{}`, seed {}\n\n", m.config_hash, m.seed);
        if rows.iter().any(|r| r.get("config_hash") != Some(&m.config_hash)) {
            eprintln!("warning: metrics.csv does not match the manifest's config hash");
        }
    }
    let cols = [
        ("method", "method"),
        ("scenario", "scenario"),
        ("shape", "shape"),
        ("critical_value", "c"),
        ("poc_rate", "PoC rate"),
        ("tpr_at_fpr_0.05", "TPR at FPR 0.05"),
        ("true_med", "true MED"),
        ("med_bias", "MED bias"),
        ("med_mse", "MED MSE"),
        ("med_n_not_reached", "MED not reached"),
        ("n_not_converged", "not converged"),
        ("n_failed", "failed"),
    ];
    text += &format!("| {} |\n", cols.map(|c| c.1).join(" | "));
    text += &format!("|{}\n", cols.map(|_| "---|").concat());
    for r in &rows {
        let cells = cols.map(|(k, _)| {
            let v = r.get(k).map(String::as_str).unwrap_or("");
            match v.parse::<f64>() {
                Ok(x) if v.contains('.') => format!("{x:.4}"),
                _ if v.is_empty() => "-".to_owned(),
                _ => v.to_owned(),
            }
        });
        text += &format!("| {} |\n", cells.join(" | "));
    }
    print!("{text}");
    let path = args.dir.join("report.md");
    fs::write(&path, &text).map_err(CliError::runtime)?;
    println!("\nwrote {}", path.display());
    Ok(())
}

//! CSV and JSON outputs. Every CSV row starts with the config hash; floats are
//! written in Rust's shortest round-trip form, so equal inputs give equal
//! bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dosecurve_core::harness::{tpr_at_fpr, MetricsRow, RocPoint, TrialRecord};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const RECORDS: &str = "records.csv";
pub const METRICS: &str = "metrics.csv";
pub const ROC: &str = "roc.csv";
pub const MANIFEST: &str = "manifest.json";

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn list(vs: &[f64]) -> String {
    vs.iter().map(|v| num(*v)).collect::<Vec<_>>().join(";")
}

fn write_rows(path: &Path, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    w.write_record(&header).map_err(CliError::runtime)?;
    for r in rows {
        w.write_record(&r).map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)
}

pub fn write_records(path: &Path, hash: &str, records: &[TrialRecord]) -> Result<(), CliError> {
    let width = records.iter().map(|r| r.mu_hat.len()).max().unwrap_or(0);
    let mut header: Vec<String> = ["config_hash", "method", "replicate", "seed", "statistic", "poc"].map(String::from).to_vec();
    header.extend((0..width).map(|i| format!("mu_hat_{i}")));
    header.extend(
        ["med", "gamma_hat", "a_hat", "r_hat", "objective", "converged", "iterations", "error"].map(String::from),
    );
    let rows = records
        .iter()
        .map(|r| {
            let mut row = vec![
                hash.to_owned(),
                r.method.clone(),
                r.replicate.to_string(),
                r.seed.to_string(),
                num(r.statistic),
                r.poc.to_string(),
            ];
            row.extend((0..width).map(|i| opt(r.mu_hat.get(i).copied())));
            row.extend([
                opt(r.med),
                num(r.gamma_hat),
                opt(r.a_hat),
                opt(r.r_hat),
                num(r.objective),
                r.converged.to_string(),
                r.iterations.to_string(),
                r.error.clone().unwrap_or_default(),
            ]);
            row
        })
        .collect();
    write_rows(path, header, rows)
}

/// Cell description repeated on every metrics row.
pub struct Cell<'a> {
    pub shape: &'a str,
    pub a: f64,
    pub r: f64,
}

pub fn write_metrics(
    path: &Path,
    hash: &str,
    cell: &Cell<'_>,
    metrics: &[MetricsRow],
    roc: Option<&BTreeMap<String, Vec<RocPoint>>>,
) -> Result<(), CliError> {
    let header = [
        "config_hash",
        "method",
        "scenario",
        "shape",
        "a",
        "r",
        "replicates",
        "critical_value",
        "poc_rate",
        "tpr_at_fpr_0.05",
        "true_med",
        "med_bias",
        "med_mse",
        "med_n_reached",
        "med_n_not_reached",
        "n_failed",
        "n_not_converged",
        "doses",
        "mu_mean",
        "mu_se",
    ]
    .map(String::from)
    .to_vec();
    let rows = metrics
        .iter()
        .map(|m| {
            let tpr = roc.and_then(|r| r.get(&m.method)).map(|pts| tpr_at_fpr(pts, 0.05));
            vec![
                hash.to_owned(),
                m.method.clone(),
                m.scenario.to_string(),
                cell.shape.to_owned(),
                num(cell.a),
                num(cell.r),
                m.replicates.to_string(),
                num(m.critical_value),
                num(m.poc_rate),
                opt(tpr),
                opt(m.true_med),
                opt(m.med.and_then(|x| x.bias)),
                opt(m.med.and_then(|x| x.mse)),
                m.med.map(|x| x.n_reached.to_string()).unwrap_or_default(),
                m.med.map(|x| x.n_not_reached.to_string()).unwrap_or_default(),
                m.n_failed.to_string(),
                m.n_not_converged.to_string(),
                list(&m.doses),
                list(&m.mu_mean),
                list(&m.mu_se),
            ]
        })
        .collect();
    write_rows(path, header, rows)
}

pub fn write_roc(path: &Path, hash: &str, curves: &BTreeMap<String, Vec<RocPoint>>) -> Result<(), CliError> {
    let header = ["config_hash", "method", "c", "fpr", "tpr"].map(String::from).to_vec();
    let rows = curves
        .iter()
        .flat_map(|(method, pts)| {
            pts.iter().map(move |p| vec![hash.to_owned(), method.clone(), num(p.c), num(p.fpr), num(p.tpr)])
        })
        .collect();
    write_rows(path, header, rows)
}

/// Config hash of the first row, if any, and statistics grouped by method.
pub type Statistics = (Option<String>, BTreeMap<String, Vec<f64>>);

/// `method → statistics` from a records CSV (or any CSV with `method` and
/// `statistic` columns), in file order. Rows with an empty or NaN statistic
/// (failed fits) are skipped.
pub fn read_statistics(path: &Path) -> Result<Statistics, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(CliError::data)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let m = col("method").ok_or_else(|| CliError::data(format!("{}: missing column `method`", path.display())))?;
    let s = col("statistic").ok_or_else(|| CliError::data(format!("{}: missing column `statistic`", path.display())))?;
    let h = col("config_hash");
    let mut hash = None;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (k, row) in reader.records().enumerate() {
        let row = row.map_err(CliError::data)?;
        if let (None, Some(i)) = (&hash, h) {
            hash = row.get(i).map(str::to_owned);
        }
        let text = row.get(s).unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let v: f64 = text
            .parse()
            .map_err(|_| CliError::data(format!("{} line {}: statistic `{text}` is not a number", path.display(), k + 2)))?;
        if v.is_nan() {
            continue;
        }
        out.entry(row.get(m).unwrap_or("").to_owned()).or_default().push(v);
    }
    Ok((hash, out))
}

/// Rows of a CSV file as header → value maps.
pub fn read_table(path: &Path) -> Result<Vec<BTreeMap<String, String>>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(CliError::data)?.clone();
    reader
        .records()
        .map(|row| {
            let row = row.map_err(CliError::data)?;
            Ok(headers.iter().map(String::from).zip(row.iter().map(String::from)).collect())
        })
        .collect()
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalValueEntry {
    pub method: String,
    pub critical_value: f64,
    pub fingerprint: String,
}

/// Run manifest written next to the simulation outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub critical_values: Vec<CriticalValueEntry>,
    /// File name → SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Option<Manifest> {
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST)).ok()?).ok()
    }

    /// True when every listed file exists with the recorded digest.
    pub fn files_intact(&self, dir: &Path) -> bool {
        !self.files.is_empty()
            && self.files.iter().all(|(name, digest)| sha256_file(&dir.join(name)).is_ok_and(|d| &d == digest))
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(CliError::runtime)? + "\n";
        fs::write(dir.join(MANIFEST), text).map_err(CliError::runtime)
    }
}

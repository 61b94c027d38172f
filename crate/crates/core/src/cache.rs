//! Critical-value cache keyed by a fingerprint of everything that determines
//! the calibration.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::inference::{calibrate_critical_value, NullDesign, PocTest};
use crate::posterior::ObjectiveSpec;
use crate::solver::SolverOptions;

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn fingerprint<S: Serialize>(value: &S) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Everything a critical value depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationKey {
    pub null: NullDesign,
    pub spec: ObjectiveSpec<f64>,
    pub solver: SolverOptions<f64>,
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl CalibrationKey {
    pub fn fingerprint(&self) -> Result<String> {
        fingerprint(self)
    }
}

/// On-disk cache record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub fingerprint: String,
    pub critical_value: f64,
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
    pub calibration_rate: f64,
}

impl CacheEntry {
    pub fn poc_test(&self) -> PocTest {
        PocTest {
            alpha: self.alpha,
            replicates: self.replicates,
            critical_value: self.critical_value,
            seed: self.seed,
            calibration_rate: self.calibration_rate,
        }
    }
}

/// In-memory cache, optionally backed by one JSON file per entry.
#[derive(Debug, Default)]
pub struct CalibrationCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, CacheEntry>>,
}

impl CalibrationCache {
    pub fn in_memory() -> Self {
        CalibrationCache::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        CalibrationCache { dir: Some(dir.into()), memory: Mutex::default() }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn path_for(&self, fingerprint: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("calibration-{fingerprint}.json")))
    }

    /// Cached entry for `fingerprint`; entries whose stored fingerprint does
    /// not match their file name are ignored.
    pub fn lookup(&self, fingerprint: &str) -> Option<CacheEntry> {
        if let Some(e) = self.memory.lock().expect("cache lock").get(fingerprint) {
            return Some(e.clone());
        }
        let text = fs::read_to_string(self.path_for(fingerprint)?).ok()?;
        let entry: CacheEntry = serde_json::from_str(&text).ok()?;
        if entry.fingerprint != fingerprint {
            return None;
        }
        self.memory.lock().expect("cache lock").insert(fingerprint.to_owned(), entry.clone());
        Some(entry)
    }

    pub fn store(&self, entry: &CacheEntry) -> Result<()> {
        if let Some(path) = self.path_for(&entry.fingerprint) {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&path, serde_json::to_string_pretty(entry)? + "\n")?;
        }
        self.memory.lock().expect("cache lock").insert(entry.fingerprint.clone(), entry.clone());
        Ok(())
    }

    /// Returns the cached calibration for `key`, computing and storing it if
    /// absent. The flag is true when the entry was reused.
    pub fn get_or_calibrate(&self, key: &CalibrationKey) -> Result<(CacheEntry, bool)> {
        let fp = key.fingerprint()?;
        if let Some(e) = self.lookup(&fp) {
            return Ok((e, true));
        }
        let test = calibrate_critical_value(&key.null, &key.spec, &key.solver, key.alpha, key.replicates, key.seed)?;
        let entry = CacheEntry {
            fingerprint: fp,
            critical_value: test.critical_value,
            alpha: test.alpha,
            replicates: test.replicates,
            seed: test.seed,
            calibration_rate: test.calibration_rate,
        };
        self.store(&entry)?;
        Ok((entry, false))
    }
}

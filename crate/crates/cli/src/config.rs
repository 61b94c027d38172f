//! Run configuration: one TOML file, overridable by command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use dosecurve_core::cache::fingerprint;
use dosecurve_core::harness::{AnalysisSettings, MethodSpec, ScenarioConfig};
use dosecurve_core::shapes::{standard_shape, ShapeFamily, ShapeManifest};
use dosecurve_core::trials::{Scenario, TrialDesign, TrueCurve};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A method entry: `name` is `SEMAP` or `LiMAP` (case-insensitive).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodEntry {
    pub name: String,
    #[serde(default)]
    pub borrow: bool,
    /// Defaults to 0.5 for SEMAP and 3 for LiMAP.
    #[serde(default)]
    pub tau: Option<f64>,
}

impl MethodEntry {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        // NAME[+borrow]
        let (name, borrow) = match text.split_once('+') {
            Some((n, "borrow")) => (n, true),
            Some(_) => return Err(CliError::config(format!("method `{text}`: expected NAME or NAME+borrow"))),
            None => (text, false),
        };
        let entry = MethodEntry { name: name.to_owned(), borrow, tau: None };
        entry.spec()?;
        Ok(entry)
    }

    pub fn spec(&self) -> Result<MethodSpec, CliError> {
        let base = match self.name.to_ascii_lowercase().as_str() {
            "semap" => MethodSpec::semap(self.borrow),
            "limap" => MethodSpec { borrow: self.borrow, ..MethodSpec::limap() },
            other => return Err(CliError::config(format!("unknown method `{other}` (expected SEMAP or LiMAP)"))),
        };
        let tau = self.tau.unwrap_or(base.tau);
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(CliError::config(format!("method {}: tau must be positive", self.name)));
        }
        Ok(MethodSpec { tau, ..base })
    }
}

fn default_methods() -> Vec<MethodEntry> {
    vec![
        MethodEntry { name: "SEMAP".into(), borrow: false, tau: None },
        MethodEntry { name: "LiMAP".into(), borrow: false, tau: None },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// 1 to 4.
    pub number: u8,
    /// Shape family name, or `null` for the flat curve.
    pub shape: String,
    pub a: f64,
    pub r: f64,
    pub replicates: usize,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection { number: 4, shape: "emax2".into(), a: 1.0, r: 0.0, replicates: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Simulate a dedicated null record set and write ROC curves.
    pub roc: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { roc: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Excluded from the config hash.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    /// Calibrated shape parameters; the built-in calibration when absent.
    #[serde(default)]
    pub shapes_manifest: Option<PathBuf>,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodEntry>,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub design: TrialDesign,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_seed() -> u64 {
    20_240_601
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config is valid")
    }
}

/// Flags shared by the computing subcommands; each one wins over the file.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for all outputs.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Analysis method, `SEMAP`, `LiMAP`, optionally suffixed `+borrow`; repeatable.
    #[arg(long = "method")]
    pub methods: Vec<String>,
    /// Scenario 1 to 4.
    #[arg(long)]
    pub scenario: Option<u8>,
    /// True shape family or `null`.
    #[arg(long)]
    pub shape: Option<String>,
    /// True predictive scale of the historical trial.
    #[arg(long)]
    pub a: Option<f64>,
    /// True prognostic shift of the historical trial.
    #[arg(long)]
    pub r: Option<f64>,
    /// Simulated trials per cell.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Significance level of the PoC test.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Null replicates used to calibrate the critical value.
    #[arg(long)]
    pub calibration_replicates: Option<usize>,
    /// Known response SD.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Worker threads (0 = all cores); never changes results.
    #[arg(long)]
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// File values (or defaults), then flag overrides, then validation.
    pub fn resolve(flags: &Overrides) -> Result<Self, CliError> {
        let mut c = match &flags.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = flags.seed {
            c.seed = v;
        }
        if let Some(v) = &flags.output_dir {
            c.output_dir = Some(v.clone());
        }
        if !flags.methods.is_empty() {
            c.methods = flags.methods.iter().map(|m| MethodEntry::parse(m)).collect::<Result<_, _>>()?;
        }
        if let Some(v) = flags.scenario {
            c.scenario.number = v;
        }
        if let Some(v) = &flags.shape {
            c.scenario.shape = v.clone();
        }
        if let Some(v) = flags.a {
            c.scenario.a = v;
        }
        if let Some(v) = flags.r {
            c.scenario.r = v;
        }
        if let Some(v) = flags.replicates {
            c.scenario.replicates = v;
        }
        if let Some(v) = flags.alpha {
            c.analysis.alpha = v;
        }
        if let Some(v) = flags.calibration_replicates {
            c.analysis.calibration_replicates = v;
        }
        if let Some(v) = flags.sigma {
            c.design.sigma = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let alpha = self.analysis.alpha;
        if !(alpha > 0.0 && alpha <= 0.5) {
            return Err(CliError::config(format!("alpha = {alpha} must lie in (0, 0.5]")));
        }
        let product = alpha * self.analysis.calibration_replicates as f64;
        if product < 5.0 {
            return Err(CliError::config(format!(
                "alpha * calibration_replicates = {product} is below 5; too few replicates to resolve the quantile"
            )));
        }
        if self.methods.is_empty() {
            return Err(CliError::config("no methods configured"));
        }
        for m in &self.methods {
            m.spec()?;
        }
        self.scenario()?;
        self.curve()?;
        self.design.validate().map_err(CliError::config)?;
        self.analysis.priors.validate().map_err(CliError::config)?;
        self.analysis.solver.validate().map_err(CliError::config)?;
        if !(self.analysis.med.delta > 0.0) {
            return Err(CliError::config("med.delta must be positive"));
        }
        if !(self.analysis.clamp_epsilon > 0.0 && self.analysis.clamp_epsilon <= 0.01) {
            return Err(CliError::config("clamp_epsilon must lie in (0, 0.01]"));
        }
        Ok(())
    }

    pub fn scenario(&self) -> Result<Scenario, CliError> {
        Scenario::try_from(self.scenario.number).map_err(CliError::config)
    }

    pub fn method_specs(&self) -> Result<Vec<MethodSpec>, CliError> {
        self.methods.iter().map(MethodEntry::spec).collect()
    }

    pub fn curve(&self) -> Result<TrueCurve, CliError> {
        let name = self.scenario.shape.as_str();
        if name.eq_ignore_ascii_case("null") {
            return Ok(TrueCurve::Null);
        }
        let family: ShapeFamily = name.parse().map_err(CliError::config)?;
        let spec = match &self.shapes_manifest {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
                let manifest: ShapeManifest =
                    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
                manifest
                    .spec(family)
                    .ok_or_else(|| CliError::config(format!("{} has no entry for {family}", path.display())))?
            }
            None => standard_shape(family),
        };
        Ok(TrueCurve::Shape(spec))
    }

    pub fn scenario_config(&self) -> Result<ScenarioConfig, CliError> {
        Ok(ScenarioConfig {
            scenario: self.scenario()?,
            curve: self.curve()?,
            a: self.scenario.a,
            r: self.scenario.r,
            replicates: self.scenario.replicates,
            master_seed: self.seed,
            methods: self.method_specs()?,
            design: self.design.clone(),
            analysis: self.analysis.clone(),
        })
    }

    /// First 16 hex digits of the SHA-256 of the resolved configuration,
    /// including the true curve's parameters but not the output directory.
    pub fn hash(&self) -> Result<String, CliError> {
        let fp = fingerprint(&(self, self.curve()?)).map_err(CliError::runtime)?;
        Ok(fp[..16].to_owned())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("dosecurve-out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_study_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.scenario.number, 4);
        assert_eq!(c.design, TrialDesign::default());
        assert_eq!(c.analysis, AnalysisSettings::default());
        assert_eq!(c.method_specs().unwrap(), vec![MethodSpec::semap(false), MethodSpec::limap()]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[analysis]\nalpah = 0.1").is_err());
        assert!(toml::from_str::<RunConfig>("[analysis.priors.borrow]\nrho = 0.1\nfoo = 1").is_err());
    }

    #[test]
    fn partial_tables_keep_defaults() {
        let c: RunConfig = toml::from_str("[analysis.priors.borrow]\nrho = 0.1").unwrap();
        assert_eq!(c.analysis.priors.borrow.rho, 0.1);
        assert_eq!(c.analysis.priors.borrow.eta, 0.2);
        assert_eq!(c.analysis.priors.tau, 0.5);
    }

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 5\n[analysis]\nalpha = 0.1\n").unwrap();
        let flags = Overrides { config: Some(path), alpha: Some(0.2), ..Overrides::default() };
        let c = RunConfig::resolve(&flags).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.analysis.alpha, 0.2);
    }

    #[test]
    fn alpha_out_of_range_is_a_config_error() {
        let flags = Overrides { alpha: Some(0.7), ..Overrides::default() };
        assert_eq!(RunConfig::resolve(&flags).unwrap_err().code(), 2);
    }

    #[test]
    fn method_flags() {
        assert_eq!(MethodEntry::parse("semap+borrow").unwrap().spec().unwrap(), MethodSpec::semap(true));
        assert!(MethodEntry::parse("mcpmod").is_err());
        assert!(MethodEntry::parse("semap+pool").is_err());
    }

    #[test]
    fn hash_ignores_output_dir_and_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig { output_dir: Some("elsewhere".into()), ..RunConfig::default() };
        let c = RunConfig { seed: 1, ..RunConfig::default() };
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    }
}

//! Patient-level trial data from CSV.
//!
//! Columns: `dose`, `response` and optionally `trial` (`current` or
//! `historical`; rows without it are current). Extra columns are ignored.

use std::path::Path;

use dosecurve_core::posterior::{TrialDataset, TrialKind};

use crate::CliError;

#[derive(Clone, Debug)]
pub struct TrialData {
    pub current: TrialDataset<f64>,
    pub historical: Option<TrialDataset<f64>>,
}

impl TrialData {
    /// Sorted union of the current and, when requested, historical doses.
    pub fn doses(&self, with_historical: bool) -> Vec<f64> {
        let mut d = self.current.doses().to_vec();
        if with_historical {
            if let Some(h) = &self.historical {
                d.extend_from_slice(h.doses());
            }
        }
        d.sort_by(|a, b| a.partial_cmp(b).expect("finite doses"));
        d.dedup();
        d
    }

    /// Patients per arm when every current arm has the same size.
    pub fn balanced_arm_size(&self) -> Option<usize> {
        let sizes: Vec<usize> = self.current.responses().iter().map(Vec::len).collect();
        sizes.windows(2).all(|w| w[0] == w[1]).then(|| sizes[0])
    }
}

fn parse_number(field: &str, column: &str, line: u64) -> Result<f64, CliError> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| CliError::data(format!("line {line}: {column} `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(CliError::data(format!("line {line}: {column} must be finite")));
    }
    Ok(v)
}

pub fn load(path: &Path, sigma: f64) -> Result<TrialData, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| CliError::data(format!("{}: {e}", path.display())))?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let dose_col = column("dose").ok_or_else(|| CliError::data(format!("{}: missing column `dose`", path.display())))?;
    let resp_col =
        column("response").ok_or_else(|| CliError::data(format!("{}: missing column `response`", path.display())))?;
    let trial_col = column("trial");
    let mut current = Vec::new();
    let mut historical = Vec::new();
    for (k, row) in reader.records().enumerate() {
        let row = row.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let line = k as u64 + 2;
        let field = |i: usize| row.get(i).unwrap_or("");
        let dose = parse_number(field(dose_col), "dose", line)?;
        if !(0.0..=1.0).contains(&dose) {
            return Err(CliError::data(format!("line {line}: dose {dose} is outside [0, 1]")));
        }
        let response = parse_number(field(resp_col), "response", line)?;
        match trial_col.map(|i| field(i).trim()) {
            None | Some("") | Some("current") => current.push((dose, response)),
            Some("historical") => historical.push((dose, response)),
            Some(other) => {
                return Err(CliError::data(format!("line {line}: trial `{other}` (expected current or historical)")))
            }
        }
    }
    if current.is_empty() {
        return Err(CliError::data(format!("{}: no rows with trial = current", path.display())));
    }
    let current = TrialDataset::from_pairs(TrialKind::Current, sigma, &current).map_err(CliError::data)?;
    let historical = if historical.is_empty() {
        None
    } else {
        Some(TrialDataset::from_pairs(TrialKind::Historical, sigma, &historical).map_err(CliError::data)?)
    };
    Ok(TrialData { current, historical })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, text).unwrap();
        (dir, path)
    }

    #[test]
    fn groups_by_trial_and_dose() {
        let (_d, p) = write("dose,response,trial\n0,0.1,current\n1,0.4,current\n0,0.2,historical\n0,0.3,current\n");
        let t = load(&p, 1.0).unwrap();
        assert_eq!(t.current.doses(), &[0.0, 1.0]);
        assert_eq!(t.current.responses()[0], vec![0.1, 0.3]);
        assert_eq!(t.historical.unwrap().doses(), &[0.0]);
    }

    #[test]
    fn schema_errors() {
        for text in ["dose,resp\n0,1\n", "dose,response\n1.5,0.2\n", "dose,response\n0.5,abc\n", "dose,response,trial\n0,1,old\n"] {
            let (_d, p) = write(text);
            assert_eq!(load(&p, 1.0).unwrap_err().code(), 3, "{text}");
        }
    }
}

//! Seeded experiment results with a fixed column schema, written as CSV
//! and JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    /// Echo of the parameters the run used.
    pub config: serde_json::Value,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub summary: BTreeMap<String, f64>,
    pub assertions: Vec<Assertion>,
    /// Not serialized, so output files stay byte-identical across runs.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl ExperimentReport {
    pub fn new(experiment: impl Into<String>, seed: u64, columns: &[&str]) -> Self {
        Self {
            experiment: experiment.into(),
            seed,
            config: serde_json::Value::Null,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            summary: BTreeMap::new(),
            assertions: Vec::new(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn with_config<T: Serialize>(mut self, config: &T) -> Result<Self> {
        self.config = serde_json::to_value(config).map_err(|e| LabError::Serialize(e.to_string()))?;
        Ok(self)
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(invalid(format!(
                "{} row has {} values but {} columns",
                self.experiment,
                row.len(),
                self.columns.len()
            )));
        }
        if let Some(pos) = row.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite value in column `{}`", self.columns[pos])));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn set_summary(&mut self, key: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(invalid(format!("summary `{key}` is not finite")));
        }
        self.summary.insert(key.to_string(), value);
        Ok(())
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.assertions.push(Assertion {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    /// Column values by name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| LabError::Serialize(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    /// Writes `<dir>/<experiment>_<seed>.{csv,json}` and returns the paths.
    pub fn write(&self, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let stem = format!("{}_{}", self.experiment, self.seed);
        let mut paths = Vec::new();
        if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
            let path = dir.join(format!("{stem}.csv"));
            std::fs::write(&path, self.to_csv())?;
            paths.push(path);
        }
        if matches!(format, OutputFormat::Json | OutputFormat::Both) {
            let path = dir.join(format!("{stem}.json"));
            std::fs::write(&path, self.to_json()?)?;
            paths.push(path);
        }
        Ok(paths)
    }

    /// Human-readable summary: key statistics and one line per assertion.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} (seed {}, {} rows, {:.2}s)", self.experiment, self.seed, self.rows.len(), self.wall_clock_secs);
        let width = self.summary.keys().map(|k| k.len()).max().unwrap_or(0);
        for (k, v) in &self.summary {
            let _ = writeln!(out, "  {k:<width$}  {v:.6e}");
        }
        for a in &self.assertions {
            let tag = if a.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "  [{tag}] {}: {}", a.name, a.detail);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
    Both,
}

impl FromStr for OutputFormat {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "both" => Ok(Self::Both),
            other => Err(LabError::UnknownName(other.to_string())),
        }
    }
}

/// Median of a non-empty sample.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExperimentReport {
        let mut r = ExperimentReport::new("demo", 7, &["n", "value"]);
        r.push_row(vec![1.0, 0.5]).unwrap();
        r.push_row(vec![2.0, 0.25]).unwrap();
        r.set_summary("total", 0.75).unwrap();
        r.check("positive", true, "all values > 0");
        r
    }

    #[test]
    fn csv_has_header_and_rows() {
        assert_eq!(sample().to_csv(), "n,value\n1,0.5\n2,0.25\n");
    }

    #[test]
    fn json_round_trips_without_wall_clock() {
        let mut r = sample();
        r.wall_clock_secs = 3.0;
        let back: ExperimentReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back.rows, r.rows);
        assert_eq!(back.wall_clock_secs, 0.0);
        assert!(!r.to_json().unwrap().contains("wall_clock"));
    }

    #[test]
    fn rejects_bad_rows() {
        let mut r = sample();
        assert!(r.push_row(vec![1.0]).is_err());
        assert!(r.push_row(vec![1.0, f64::NAN]).is_err());
        assert!(r.set_summary("x", f64::INFINITY).is_err());
    }

    #[test]
    fn writes_requested_formats() {
        let dir = std::env::temp_dir().join(format!("report-test-{}", std::process::id()));
        let paths = sample().write(&dir, OutputFormat::Both).unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths[0].ends_with("demo_7.csv"));
        assert_eq!(std::fs::read_to_string(&paths[0]).unwrap(), sample().to_csv());
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert!("xml".parse::<OutputFormat>().is_err());
        assert_eq!("both".parse::<OutputFormat>().unwrap(), OutputFormat::Both);
    }
}

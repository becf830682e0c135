//! The `percoqs-report/1` container shared by every command that produces
//! results, plus the row type of the CSV series.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Result;

pub const REPORT_FORMAT: &str = "percoqs-report/1";

/// Header of every CSV series file.
pub const SERIES_HEADER: [&str; 6] = ["quantity", "s", "n", "value", "stderr", "seed_count"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub command: String,
    /// Fully resolved configuration, defaults included.
    pub config: Value,
    pub seed: u64,
    pub results: Value,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new(command: impl Into<String>, config: Value, seed: u64) -> Self {
        Report {
            format: REPORT_FORMAT.into(),
            command: command.into(),
            config,
            seed,
            results: Value::Null,
            checks: Vec::new(),
        }
    }

    pub fn with_results(mut self, results: Value) -> Self {
        self.results = results;
        self
    }

    pub fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(name, pass, detail));
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    /// Pretty JSON with a trailing newline. Field order is fixed by the
    /// struct layout, so equal reports give equal bytes.
    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

/// One row of a tabular series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub quantity: String,
    pub s: Option<f64>,
    pub n: Option<usize>,
    pub value: f64,
    pub stderr: Option<f64>,
    pub seed_count: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip_and_verdict() {
        let mut r = Report::new("solve t", json!({"M": 3}), 7).with_results(json!({"t": 1.5}));
        r.check("residual", true, "1e-15");
        assert!(r.all_pass());
        r.check("t < s", false, "t = s");
        assert_eq!(r.failures().count(), 1);
        let bytes = r.to_json_bytes().unwrap();
        assert_eq!(*bytes.last().unwrap(), b'\n');
        assert_eq!(Report::from_json_bytes(&bytes).unwrap(), r);
        let v: Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["format"], REPORT_FORMAT);
    }
}

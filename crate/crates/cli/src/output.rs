use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Columns shared by the strong-error experiments.
pub const ERROR_COLUMNS: [&str; 13] = [
    "experiment", "solver", "potential", "d", "Ns", "T", "trials", "mse", "se", "slope",
    "slope_se", "seed", "version",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            pass,
            detail: detail.into(),
        }
    }
}

/// Rows of the primary CSV; every cell is already formatted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Config(format!("csv: {e}"));
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row).map_err(io)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CliError::Config(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Shortest round-trip representation, so equal values print equally.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Result of one experiment before it is written out.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub experiment: &'static str,
    pub params: Value,
    pub results: Value,
    pub checks: Vec<Check>,
    pub table: Table,
    /// Extra text artifacts as `(file name, contents)`.
    pub extra: Vec<(String, String)>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn summary_json(&self, runtime_s: f64) -> Value {
        json!({
            "experiment": self.experiment,
            "params": self.params,
            "results": self.results,
            "checks": self.checks,
            "runtime_s": runtime_s,
        })
    }

    /// Write `<experiment>.csv`, `<experiment>.json` and extra artifacts;
    /// returns the paths written.
    pub fn write(&self, dir: &Path, runtime_s: f64) -> Result<Vec<PathBuf>, CliError> {
        let io = |path: &Path, e: std::io::Error| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let mut written = Vec::new();
        let csv_path = dir.join(format!("{}.csv", self.experiment));
        std::fs::write(&csv_path, self.table.to_csv()?).map_err(|e| io(&csv_path, e))?;
        written.push(csv_path);
        let json_path = dir.join(format!("{}.json", self.experiment));
        let text = serde_json::to_string_pretty(&self.summary_json(runtime_s))
            .expect("summary is serializable");
        std::fs::write(&json_path, text + "\n").map_err(|e| io(&json_path, e))?;
        written.push(json_path);
        for (name, contents) in &self.extra {
            let path = dir.join(name);
            std::fs::write(&path, contents).map_err(|e| io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1e-20, 3.0, -2.5e7, f64::INFINITY] {
            let s = num(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn csv_quotes_fields_with_commas() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["quadratic:u=1,L=4".into(), "2".into()]);
        assert_eq!(t.to_csv().unwrap(), "a,b\n\"quadratic:u=1,L=4\",2\n");
    }
}

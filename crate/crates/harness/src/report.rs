//! Experiment reports: a table of per-condition rows plus a header with the
//! configuration echo, fitted summaries and timing.
//!
//! The CSV body holds only the rows, so it is byte-identical across reruns with
//! the same flags and seeds. Timing lives in the header.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::{HarnessError, Result};

/// One table cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => render_float(*x),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(i) => Some(*i as f64),
            Cell::Float(x) => Some(*x),
            _ => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub experiment_id: String,
    pub config: Value,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Fitted slopes, rates and other scalar summaries.
    pub summary: BTreeMap<String, f64>,
    /// Number of failed hard checks; nonzero maps to exit code 2.
    pub violations: usize,
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    pub fn new(experiment_id: &str, config: Value, columns: &[&str]) -> Self {
        Self {
            experiment_id: experiment_id.to_string(),
            config,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            summary: BTreeMap::new(),
            violations: 0,
            wall_clock_seconds: 0.0,
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric values of one column.
    pub fn values(&self, name: &str) -> Vec<f64> {
        match self.column(name) {
            Some(i) => self.rows.iter().filter_map(|r| r[i].as_f64()).collect(),
            None => Vec::new(),
        }
    }

    pub fn csv_body(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Output(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| HarnessError::Output(e.to_string()))
    }

    fn header(&self) -> Value {
        serde_json::json!({
            "experiment_id": self.experiment_id,
            "config": self.config,
            "summary": self.summary,
            "violations": self.violations,
            "wall_clock_seconds": self.wall_clock_seconds,
            "created_unix_seconds": unix_now(),
        })
    }

    /// Writes the report into `dir` and returns the written paths.
    ///
    /// CSV: `<id>.csv` (rows) and `<id>.header.json`. JSON: `<id>.json` with rows and header.
    pub fn write(&self, dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        match format {
            Format::Csv => {
                let body = dir.join(format!("{}.csv", self.experiment_id));
                std::fs::write(&body, self.csv_body()?)?;
                let header = dir.join(format!("{}.header.json", self.experiment_id));
                std::fs::write(&header, serde_json::to_string_pretty(&self.header())? + "\n")?;
                Ok(vec![body, header])
            }
            Format::Json => {
                let path = dir.join(format!("{}.json", self.experiment_id));
                let mut value = self.header();
                value["columns"] = serde_json::to_value(&self.columns)?;
                value["rows"] = serde_json::to_value(&self.rows)?;
                std::fs::write(&path, serde_json::to_string_pretty(&value)? + "\n")?;
                Ok(vec![path])
            }
        }
    }

    /// Prints the body to `out` and a one-line summary to `err`.
    pub fn print(&self, format: Format, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
        match format {
            Format::Csv => out.write_all(self.csv_body()?.as_bytes())?,
            Format::Json => {
                let mut value = self.header();
                value["columns"] = serde_json::to_value(&self.columns)?;
                value["rows"] = serde_json::to_value(&self.rows)?;
                writeln!(out, "{}", serde_json::to_string_pretty(&value)?)?;
            }
        }
        writeln!(err, "{}: {}", self.experiment_id, serde_json::to_string(&self.summary)?)?;
        Ok(())
    }
}

/// Plain decimal for moderate magnitudes, scientific notation otherwise; both round-trip exactly.
fn render_float(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let x = [1.0, 10.0, 100.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((loglog_slope(&x, &y) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn csv_body_is_deterministic() {
        let mut r = ExperimentReport::new("t", Value::Null, &["seed", "x", "ok"]);
        r.push(vec![1u64.into(), 0.1.into(), true.into()]);
        r.push(vec![2u64.into(), 1e-20.into(), false.into()]);
        assert_eq!(r.csv_body().unwrap(), "seed,x,ok\n1,0.1,true\n2,1e-20,false\n");
        assert_eq!(r.values("x"), vec![0.1, 1e-20]);
    }
}

//! Report assembly and atomic file output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// One asserted invariant.
#[derive(Clone, Debug, Serialize)]
pub struct Invariant {
    pub name: String,
    pub case: Option<String>,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Invariant {
    pub fn new(name: &str, case: Option<&str>, pass: bool, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Invariant {
            name: name.to_string(),
            case: case.map(str::to_string),
            pass,
            value,
            threshold,
            detail: detail.into(),
        }
    }

    /// `value <= threshold`.
    pub fn at_most(name: &str, case: Option<&str>, value: f64, threshold: f64) -> Self {
        Self::new(name, case, value <= threshold, value, threshold, format!("{value:.6e} <= {threshold:.6e}"))
    }

    /// `value >= threshold`.
    pub fn at_least(name: &str, case: Option<&str>, value: f64, threshold: f64) -> Self {
        Self::new(name, case, value >= threshold, value, threshold, format!("{value:.6e} >= {threshold:.6e}"))
    }

    /// `|value − target| <= tol·|target|`.
    pub fn relative(name: &str, case: Option<&str>, value: f64, target: f64, tol: f64) -> Self {
        let err = (value - target).abs() / target.abs();
        Self::new(name, case, err <= tol, value, target, format!("relative error {err:.4} (tolerance {tol})"))
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Summary {
    pub all_pass: bool,
    pub invariants: Vec<Invariant>,
    /// Fitted exponents and implied constants keyed by `case/quantity`.
    pub fitted: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub tool_version: &'static str,
    pub kind: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub records: Vec<serde_json::Value>,
    pub summary: Summary,
    pub wall_time_s: f64,
}

impl Report {
    pub fn failures(&self) -> impl Iterator<Item = &Invariant> {
        self.summary.invariants.iter().filter(|i| !i.pass)
    }
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_vec_pretty(value)?;
    s.push(b'\n');
    write_atomic(path, &s)
}

/// A CSV table with a frozen header.
#[derive(Clone, Debug)]
pub struct Table {
    pub header: &'static [&'static str],
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &'static [&'static str]) -> Self {
        Table { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: Table) {
        self.rows.extend(other.rows);
    }

    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record(self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        write_atomic(path, &bytes)
    }
}

/// Formats a float for CSV output; `None` becomes an empty cell.
pub fn cell(v: impl Into<Option<f64>>) -> String {
    match v.into() {
        Some(x) => format!("{x:e}"),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        write_json_atomic(&p, &vec![1, 2]).unwrap();
        write_json_atomic(&p, &vec![3]).unwrap();
        let back: Vec<i32> = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(back, vec![3]);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![cell(1.5), cell(None)]);
        t.write_atomic(&dir.path().join("t.csv")).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("t.csv")).unwrap(), "a,b\n1.5e0,\n");
    }
}

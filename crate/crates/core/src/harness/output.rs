//! CSV and JSON output.
//!
//! CSV files open with `#` comment lines naming the experiment, the config
//! hash and every column, followed by a header row. Floats use 17
//! significant digits so values round-trip exactly.

use super::HarnessError;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

pub enum Cell {
    F(f64),
    U(u64),
    S(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::U(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::U(x as u64)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::S(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::S(x)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::S(x.to_string())
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => fmt_f64(*x),
            Cell::U(x) => x.to_string(),
            Cell::S(s) => {
                if s.contains([',', '"', '\n']) {
                    format!("\"{}\"", s.replace('"', "\"\""))
                } else {
                    s.clone()
                }
            }
        }
    }
}

/// In-memory CSV table with documented columns.
pub struct Table {
    title: String,
    notes: Vec<String>,
    columns: Vec<(&'static str, &'static str)>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(title: &str, columns: &[(&'static str, &'static str)]) -> Self {
        Table {
            title: title.to_string(),
            notes: Vec::new(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.notes.push(line.into());
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.title);
        for n in &self.notes {
            let _ = writeln!(out, "# {n}");
        }
        let _ = writeln!(out, "# columns:");
        for (name, doc) in &self.columns {
            let _ = writeln!(out, "#   {name}: {doc}");
        }
        let header: Vec<&str> = self.columns.iter().map(|c| c.0).collect();
        let _ = writeln!(out, "{}", header.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// Writes `<dir>/<name>.csv` and `<dir>/<name>.json`.
pub fn write_outputs<T: Serialize>(dir: &Path, name: &str, table: &Table, json: &T) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{name}.csv"));
    std::fs::write(&csv, table.render())?;
    let js = dir.join(format!("{name}.json"));
    let body = serde_json::to_string_pretty(json).map_err(|e| HarnessError::Experiment(e.to_string()))?;
    std::fs::write(&js, body + "\n")?;
    Ok(vec![csv, js])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, std::f64::consts::PI] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(f64::NAN), "nan");
    }

    #[test]
    fn table_layout() {
        let mut t = Table::new("demo", &[("a", "first"), ("b", "second")]);
        t.note("config_hash=abc");
        t.push(vec![1u64.into(), "x,y".into()]);
        let s = t.render();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# demo");
        assert_eq!(lines[1], "# config_hash=abc");
        assert_eq!(lines[5], "a,b");
        assert_eq!(lines[6], "1,\"x,y\"");
    }
}

//! Plain-text reports, JSON summaries and CSV emission.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Map, Value};

/// Formats a float with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|&x| num(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    Value::Array(m.row_iter().map(|r| json!(r.iter().copied().collect::<Vec<f64>>())).collect())
}

/// A command's output: text report, machine-readable summary and CSV files.
#[derive(Debug)]
pub struct Report {
    name: String,
    text: String,
    summary: Map<String, Value>,
    csvs: Vec<(String, String)>,
}

impl Report {
    pub fn new(name: &str, scenario: &str, hash: &str, seed: u64) -> Self {
        let mut r = Self {
            name: name.to_string(),
            text: String::new(),
            summary: Map::new(),
            csvs: Vec::new(),
        };
        r.field("command", name);
        r.field("scenario", scenario);
        r.field("config_sha256", hash);
        r.summary.insert("seed".into(), json!(seed));
        writeln!(r.text, "seed: {seed}").unwrap();
        r
    }

    pub fn field(&mut self, key: &str, value: impl ToString) {
        let v = value.to_string();
        writeln!(self.text, "{key}: {v}").unwrap();
        self.summary.insert(key.into(), Value::String(v));
    }

    pub fn number(&mut self, key: &str, x: f64) {
        writeln!(self.text, "{key}: {}", num(x)).unwrap();
        self.summary.insert(key.into(), json!(x));
    }

    pub fn count(&mut self, key: &str, n: usize) {
        writeln!(self.text, "{key}: {n}").unwrap();
        self.summary.insert(key.into(), json!(n));
    }

    pub fn flag(&mut self, key: &str, b: bool) {
        writeln!(self.text, "{key}: {b}").unwrap();
        self.summary.insert(key.into(), json!(b));
    }

    pub fn vector(&mut self, key: &str, v: &DVector<f64>) {
        let cells: Vec<String> = v.iter().map(|&x| num(x)).collect();
        writeln!(self.text, "{key}: [{}]", cells.join(", ")).unwrap();
        self.summary.insert(key.into(), json!(v.iter().copied().collect::<Vec<f64>>()));
    }

    pub fn matrix(&mut self, key: &str, m: &DMatrix<f64>) {
        writeln!(self.text, "{key}:").unwrap();
        for row in m.row_iter() {
            let cells: Vec<String> = row.iter().map(|&x| num(x)).collect();
            writeln!(self.text, "  [{}]", cells.join(", ")).unwrap();
        }
        self.summary.insert(key.into(), matrix_json(m));
    }

    pub fn lines(&mut self, key: &str, items: &[String]) {
        if items.is_empty() {
            return;
        }
        writeln!(self.text, "{key}:").unwrap();
        for s in items {
            writeln!(self.text, "  - {s}").unwrap();
        }
        self.summary.insert(key.into(), json!(items));
    }

    pub fn csv(&mut self, file: &str, content: String) {
        self.csvs.push((file.to_string(), content));
    }

    #[cfg(test)]
    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&Value::Object(self.summary.clone())).expect("summary serializes") + "\n"
    }

    /// Prints the text report and, when `out` is set, writes
    /// `<name>_report.txt`, `<name>_summary.json` and the CSV files there.
    pub fn emit(&self, out: Option<&Path>) -> Result<()> {
        print!("{}", self.text);
        let Some(dir) = out else { return Ok(()) };
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let write = |file: &str, body: &str| {
            let p = dir.join(file);
            std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))
        };
        write(&format!("{}_report.txt", self.name), &self.text)?;
        write(&format!("{}_summary.json", self.name), &self.summary_json())?;
        for (file, body) in &self.csvs {
            write(file, body)?;
        }
        Ok(())
    }
}

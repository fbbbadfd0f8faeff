use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

/// A named numeric table written as `<name>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub headers: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: impl Into<String>, headers: Vec<&'static str>) -> Self {
        Self {
            name: name.into(),
            headers,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    /// CSV text with every value at 17 significant digits.
    pub fn to_csv(&self) -> CliResult<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let to_err = |e: csv::Error| CliError::validation(format!("csv: {e}"));
        w.write_record(&self.headers).map_err(to_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:.16e}")))
                .map_err(to_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::validation(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
    }
}

/// Everything an experiment produces.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub summary: Value,
    /// Extra JSON documents, by file name.
    pub documents: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub toolkit_version: &'static str,
    pub experiment: String,
    pub seed: Option<u64>,
    pub parameters: Value,
    pub wall_clock_s: f64,
    pub result: Value,
    /// Files written next to the record, relative to the output directory.
    pub manifest: Vec<String>,
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const RECORD_FILE: &str = "run_record.json";

fn write(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::io(path, e))
}

/// Writes tables, documents and the summary; returns the manifest.
pub fn write_outcome(dir: &Path, outcome: &Outcome) -> CliResult<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut manifest = Vec::new();
    for t in &outcome.tables {
        write(dir, &t.file_name(), &t.to_csv()?)?;
        manifest.push(t.file_name());
    }
    for (name, text) in &outcome.documents {
        write(dir, name, text)?;
        manifest.push(name.clone());
    }
    write(dir, SUMMARY_FILE, &pretty(&outcome.summary))?;
    manifest.push(SUMMARY_FILE.into());
    Ok(manifest)
}

pub fn write_record(dir: &Path, record: &RunRecord) -> CliResult<()> {
    write(dir, RECORD_FILE, &pretty(record))
}

pub fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("outputs serialize");
    s.push('\n');
    s
}

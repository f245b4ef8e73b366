//! CSV tables and the JSON manifest written by each invocation.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use ehdsc_core::sim::{summarize, ExperimentConfig, Row, Summary, CSV_HEADER};
use serde::Serialize;

/// Serializes rows with the fixed header, `.` decimals and LF line endings.
pub fn write_csv<W: Write>(out: W, rows: &[Row]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[Row]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    let text = String::from_utf8(buf)?;
    ensure!(text.lines().next() == Some(CSV_HEADER), "CSV header drifted from the schema");
    Ok(text)
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub software: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<f64>,
    pub summaries: Vec<Summary>,
}

impl<'a> Manifest<'a> {
    pub fn new(command: &'a str, config: &'a ExperimentConfig) -> Self {
        Self {
            software: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            values: None,
            csv: None,
            lower_bound: None,
            summaries: Vec::new(),
        }
    }
}

/// Writes `<name>.csv` when rows are given and always `<name>.manifest.json`.
/// Returns the paths written.
pub fn emit(dir: &Path, name: &str, rows: Option<&[Row]>, mut manifest: Manifest) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    if let Some(rows) = rows {
        let path = dir.join(format!("{name}.csv"));
        std::fs::write(&path, csv_string(rows)?).with_context(|| format!("writing {}", path.display()))?;
        manifest.csv = Some(format!("{name}.csv"));
        manifest.summaries = summarize(rows);
        written.push(path);
    }
    let path = dir.join(format!("{name}.manifest.json"));
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
    written.push(path);
    Ok(written)
}

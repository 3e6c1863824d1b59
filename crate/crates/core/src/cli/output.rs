//! CSV tables, result records and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use super::config::RunConfig;
use crate::error::Result;

/// `{quantity, value, method, residual, horizon}`.
#[derive(Debug, Clone, Serialize)]
pub struct Record {
    pub quantity: String,
    pub value: Value,
    pub method: String,
    pub residual: Option<f64>,
    pub horizon: Option<u64>,
}

impl Record {
    pub fn new(quantity: &str, value: impl Into<Value>, method: &str) -> Self {
        Record {
            quantity: quantity.to_string(),
            value: value.into(),
            method: method.to_string(),
            residual: None,
            horizon: None,
        }
    }

    pub fn residual(mut self, r: f64) -> Self {
        self.residual = Some(r);
        self
    }

    pub fn horizon(mut self, h: u64) -> Self {
        self.horizon = Some(h);
        self
    }
}

/// Formats a float for CSV; `None` becomes an empty cell.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
    records: Vec<Record>,
    details: serde_json::Map<String, Value>,
    started: Instant,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            records: Vec::new(),
            details: serde_json::Map::new(),
            started: Instant::now(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes a CSV table with a header row.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Writes a file whose contents are already formatted.
    pub fn raw(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.path(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn record(&mut self, r: Record) {
        self.records.push(r);
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.details.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    /// Writes `results.json` and `manifest.json`; returns the results document.
    pub fn finish(mut self, cfg: &RunConfig, status: &str, workers: usize) -> Result<Value> {
        let results = json!({
            "command": cfg.command,
            "status": status,
            "records": self.records,
            "details": Value::Object(std::mem::take(&mut self.details)),
        });
        fs::write(
            self.path("results.json"),
            serde_json::to_string_pretty(&results)? + "\n",
        )?;
        self.files.push("results.json".to_string());
        let manifest = json!({
            "tool": "polymerlab",
            "version": env!("CARGO_PKG_VERSION"),
            "command": cfg.command,
            "status": status,
            "config": cfg.values(),
            "config_hash": cfg.hash(),
            "master_seed": cfg.u64("run.seed")?,
            "git_revision": git_revision(),
            "workers": workers,
            "wall_time_secs": self.started.elapsed().as_secs_f64(),
            "outputs": self.files,
        });
        fs::write(
            self.path("manifest.json"),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(results)
    }
}

fn git_revision() -> String {
    if let Ok(rev) = std::env::var("POLYMERLAB_GIT_REVISION") {
        return rev;
    }
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

//! Result tables and the run directory layout.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde_json::{json, Value};

/// A CSV table; every cell is already formatted.
pub struct Table {
    pub name: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &'static str, header: &[&'static str]) -> Self {
        Table { name, header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Formats a number with the shortest round-trip representation.
pub fn num<T: std::fmt::Display>(x: T) -> String {
    x.to_string()
}

/// Everything a command produces.
pub struct Outcome {
    pub summary: Value,
    pub tables: Vec<Table>,
    /// Short human-readable report for stdout.
    pub lines: Vec<String>,
}

pub struct Manifest<'a> {
    pub command: &'a str,
    pub builtin: Option<&'a str>,
    pub config: Value,
    pub seed: Option<u64>,
    pub overrides: Value,
}

/// Writes `manifest.json`, `summary.json` and one CSV per table into `dir`.
pub fn write_run(dir: &Path, manifest: &Manifest, outcome: &Outcome) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let m = json!({
        "tool": "rpfcli",
        "versions": {
            "rpfcli": env!("CARGO_PKG_VERSION"),
            "rpf-core": rpf_core::VERSION,
        },
        "command": manifest.command,
        "builtin": manifest.builtin,
        "seed": manifest.seed,
        "overrides": manifest.overrides,
        "config": manifest.config,
        "outputs": outcome.tables.iter().map(|t| format!("{}.csv", t.name)).collect::<Vec<_>>(),
        "timestamp_unix": timestamp,
    });
    write_json(&dir.join("manifest.json"), &m)?;
    write_json(&dir.join("summary.json"), &outcome.summary)?;
    for t in &outcome.tables {
        let path = dir.join(format!("{}.csv", t.name));
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(&t.header)?;
        for row in &t.rows {
            w.write_record(row)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

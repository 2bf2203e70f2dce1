//! CSV and manifest writing.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

use crate::error::{CliError, CliResult};

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Shortest round-trip decimal; `inf` for `+∞`.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json(path: &Path, v: &Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::io(path, e))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// `manifest.json`: everything needed to reproduce the run. The creation
/// time is the only field that changes between identical invocations.
pub fn write_manifest(dir: &Path, command: &str, config_text: &str, seeds: &[u64], files: &[String]) -> CliResult<()> {
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let v = json!({
        "command": command,
        "code_version": CODE_VERSION,
        "config": config_text,
        "seeds": seeds.iter().map(|s| format!("0x{s:016x}")).collect::<Vec<_>>(),
        "outputs": files,
        "created_unix": created,
    });
    write_json(&dir.join("manifest.json"), &v)
}

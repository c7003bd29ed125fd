//! Run directories: `metrics.csv`, `summary.json`, `config_resolved.json`.

use std::fs;
use std::path::Path;

use fedopt_core::federation::{RoundMetrics, RunConfig};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const METRICS_HEADER: [&str; 8] = [
    "round",
    "loss",
    "grad_norm_sq",
    "drift",
    "v_variance",
    "eta_effective",
    "bytes_up",
    "bytes_down",
];

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// CSV body for the metrics. Floats use Rust's shortest round-trip form, so
/// parsing a field gives back the exact value.
pub fn metrics_csv(metrics: &[RoundMetrics]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| CliError::Io(format!("writing metrics: {e}"));
    w.write_record(METRICS_HEADER).map_err(to_err)?;
    for m in metrics {
        w.write_record([
            m.round.to_string(),
            m.loss.to_string(),
            m.grad_norm_sq.to_string(),
            m.drift.to_string(),
            m.v_variance.to_string(),
            m.eta.to_string(),
            m.bytes_up.to_string(),
            m.bytes_down.to_string(),
        ])
        .map_err(to_err)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Io(format!("writing metrics: {e}")))
}

/// Hex SHA-256 of the canonical JSON form of a resolved configuration.
pub fn config_hash(resolved: &RunConfig) -> String {
    let bytes = serde_json::to_vec(resolved).expect("run configs always serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub version: &'static str,
    pub config_hash: String,
    pub algorithm: &'static str,
    pub seed: u64,
    pub task_seed: u64,
    pub dim: usize,
    pub blocks: usize,
    pub empty_client_repairs: usize,
    pub rounds: usize,
    #[serde(rename = "final")]
    pub last: Option<RoundMetrics>,
    pub wall_clock_secs: f64,
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Writes the three run artifacts into `dir`, creating it if needed.
pub fn write_run_dir(
    dir: &Path,
    resolved: &RunConfig,
    metrics: &[RoundMetrics],
    summary: &RunSummary,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let csv_path = dir.join("metrics.csv");
    fs::write(&csv_path, metrics_csv(metrics)?).map_err(|e| io_err(&csv_path, e))?;
    write_json(&dir.join("config_resolved.json"), resolved)?;
    write_json(&dir.join("summary.json"), summary)
}

//! Convergence logs as CSV, plus the `run.json` record that identifies the
//! experiment a log belongs to.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricSample;
use crate::runner::{ConvergenceLog, SolverConfig, StopReason, SweepCertificate};

pub const LOG_COLUMNS: [&str; 5] = ["iter", "residual", "mag_error", "elapsed_s", "stop_flag"];
pub const CERT_COLUMN: &str = "certified";

fn reason_from_str(s: &str) -> Option<StopReason> {
    match s {
        "moving_average" => Some(StopReason::MovingAverage),
        "noise_floor" => Some(StopReason::NoiseFloor),
        "max_iters" => Some(StopReason::MaxIters),
        _ => None,
    }
}

/// Writes one row per sweep. `stop_flag` is empty except on the final row
/// of a stopped run, where it names the rule that fired. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_log_csv(path: &Path, log: &ConvergenceLog) -> Result<()> {
    let certified = !log.certificates.is_empty();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = LOG_COLUMNS.to_vec();
    if certified {
        header.push(CERT_COLUMN);
    }
    w.write_record(&header)?;
    let n = log.samples.len();
    for (i, s) in log.samples.iter().enumerate() {
        let flag = match (i + 1 == n, log.stop_reason) {
            (true, Some(r)) => r.to_string(),
            _ => String::new(),
        };
        let mut row = vec![
            s.iter.to_string(),
            s.residual.to_string(),
            s.mag_error.map_or(String::new(), |e| e.to_string()),
            s.elapsed_s.to_string(),
            flag,
        ];
        if certified {
            row.push(log.certificates.get(i).map_or(String::new(), |c| c.passed.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a log written by [`write_log_csv`]. Certificates come back with
/// only the pass flag populated.
pub fn read_log_csv(path: &Path) -> Result<ConvergenceLog> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Missing(format!("{}: column '{name}' missing", path.display())))
    };
    let idx: Vec<usize> = LOG_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let cert_idx = headers.iter().position(|h| h == CERT_COLUMN);
    let bad = |line: usize, what: &str| Error::Corrupt {
        path: path.to_path_buf(),
        reason: format!("row {line}: bad {what}"),
    };

    let mut log = ConvergenceLog::default();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let iter = field(idx[0]).parse().map_err(|_| bad(line + 1, "iter"))?;
        let residual = field(idx[1]).parse().map_err(|_| bad(line + 1, "residual"))?;
        let mag_error = match field(idx[2]) {
            "" => None,
            s => Some(s.parse().map_err(|_| bad(line + 1, "mag_error"))?),
        };
        let elapsed_s = field(idx[3]).parse().map_err(|_| bad(line + 1, "elapsed_s"))?;
        match field(idx[4]) {
            "" => {}
            s => log.stop_reason = Some(reason_from_str(s).ok_or_else(|| bad(line + 1, "stop_flag"))?),
        }
        if let Some(ci) = cert_idx {
            let passed = field(ci) == "true";
            log.certificates.push(SweepCertificate {
                majorization_margin: f64::NAN,
                anchor_gap: f64::NAN,
                regions: 0,
                regions_descended: 0,
                entrywise_failures: 0,
                passed,
            });
        }
        log.samples.push(MetricSample { iter, residual, mag_error, elapsed_s });
    }
    Ok(log)
}

/// Identity and outcome of one reconstruction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// SHA-256 of the dataset manifest.
    pub dataset_fingerprint: String,
    pub dataset_path: String,
    pub object_side: usize,
    pub probe_side: usize,
    pub scan_positions: usize,
    #[serde(default)]
    pub noise_percent: Option<f64>,
    pub solver: SolverConfig,
    pub sweeps: usize,
    pub stop_reason: Option<StopReason>,
    pub final_residual: f64,
    #[serde(default)]
    pub final_mag_error: Option<f64>,
    #[serde(default)]
    pub noise_floor: Option<f64>,
}

impl RunRecord {
    /// Runs compare meaningfully when they share the dataset.
    pub fn same_experiment(&self, other: &RunRecord) -> bool {
        self.dataset_fingerprint == other.dataset_fingerprint
    }
}

pub fn write_run_record(path: &Path, rec: &RunRecord) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(rec)? + "\n")?;
    Ok(())
}

pub fn read_run_record(path: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Corrupt { path: path.to_path_buf(), reason: e.to_string() })
}

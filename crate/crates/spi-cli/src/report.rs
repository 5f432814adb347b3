//! Result serialization: JSON reports for single solves, CSV for sweeps,
//! optional gnuplot-ready two-column data files.
//!
//! All floating-point output goes through [`fmt_f64`] (six significant
//! digits, scientific) so identical runs produce identical bytes.

use std::fs;
use std::path::Path;

use serde::Serialize;
use spi_core::conic::SolveStatus;

/// Canonical float formatting for text outputs: 6 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return "0.000000e0".into();
    }
    format!("{x:.6e}")
}

/// Wall time subject to the determinism policy.
pub fn fmt_time(seconds: f64, record_timings: bool) -> String {
    if record_timings {
        fmt_f64(seconds)
    } else {
        fmt_f64(0.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StatusReport {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<String>,
    pub iterations: usize,
    pub solver_time_s: String,
}

impl StatusReport {
    pub fn new(status: &SolveStatus, record_timings: bool) -> Self {
        Self {
            status: status.outcome.as_str().to_string(),
            certificate: status.certificate.clone(),
            iterations: status.iterations,
            solver_time_s: fmt_time(status.wall_time, record_timings),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleEntry {
    pub ka: String,
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_hz: Option<String>,
    /// Per-step `(time, rate)` pairs, present in per-step mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rates: Option<Vec<(String, String)>>,
    #[serde(flatten)]
    pub status: StatusReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceEntry {
    pub ka: String,
    pub mode: String,
    /// Row-major precision entries per solved step.
    pub precision: Vec<Vec<String>>,
    /// Row-major covariance entries per solved step; `null` where the
    /// precision is singular.
    pub implied_covariance: Vec<Option<Vec<String>>>,
    #[serde(flatten)]
    pub status: StatusReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report<E: Serialize> {
    pub schema_version: u32,
    pub command: String,
    pub entries: Vec<E>,
}

impl<E: Serialize> Report<E> {
    pub fn new(command: &str, entries: Vec<E>) -> Self {
        Self {
            schema_version: crate::config::SCHEMA_VERSION,
            command: command.to_string(),
            entries,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), String> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| format!("report serialization: {e}"))?;
        fs::write(path, text + "\n").map_err(|e| format!("write {}: {e}", path.display()))
    }
}

/// One sweep-result row.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub ka: f64,
    pub variant: &'static str,
    pub trial: usize,
    pub solved_rate_hz: Option<f64>,
    /// Row-major solved covariance entries.
    pub solved_cov: Option<Vec<f64>>,
    pub rmse_m: Option<f64>,
    pub status: String,
    pub solver_time_s: f64,
}

pub const RESULTS_HEADER: &str =
    "ka,variant,trial,solved_rate_hz,solved_cov,rmse_m,status,solver_time_s";

pub fn results_csv(rows: &[ResultRow], record_timings: bool) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        let rate = r.solved_rate_hz.map(fmt_f64).unwrap_or_default();
        let cov = r
            .solved_cov
            .as_ref()
            .map(|c| c.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        let rmse = r.rmse_m.map(fmt_f64).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            fmt_f64(r.ka),
            r.variant,
            r.trial,
            rate,
            cov,
            rmse,
            r.status,
            fmt_time(r.solver_time_s, record_timings),
        ));
    }
    out
}

/// Per-(ka, variant) aggregate.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub ka: f64,
    pub variant: &'static str,
    pub trials: usize,
    pub mean_rmse_m: Option<f64>,
}

pub const SUMMARY_HEADER: &str = "ka,variant,trials,mean_rmse_m";

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(r.ka),
            r.variant,
            r.trials,
            r.mean_rmse_m.map(fmt_f64).unwrap_or_default(),
        ));
    }
    out
}

/// Two-column gnuplot data: `ka mean_rmse` for one variant.
pub fn plot_data(rows: &[SummaryRow], variant: &str) -> String {
    let mut out = String::new();
    for r in rows.iter().filter(|r| r.variant == variant) {
        if let Some(m) = r.mean_rmse_m {
            out.push_str(&format!("{} {}\n", fmt_f64(r.ka), fmt_f64(m)));
        }
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<(), String> {
    fs::write(path, text).map_err(|e| format!("write {}: {e}", path.display()))
}

/// Matrix to row-major formatted entries.
pub fn matrix_entries(m: &nalgebra::DMatrix<f64>) -> Vec<String> {
    let mut v = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(fmt_f64(m[(i, j)]));
        }
    }
    v
}

pub fn matrix_values(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

//! Experiment configuration: a single versioned JSON document.
//!
//! Everything the harness does is driven from here; there is no
//! environment-variable configuration, so a config file plus a seed fully
//! reproduces a run.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use spi_core::sensors::{PositionSensor, RangeSensor, SensorModel};
use spi_core::MotionPrior;

pub const SCHEMA_VERSION: u32 = 1;

/// A field that is either a concrete value or the literal string "solve".
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SolveOr<T> {
    Solve(SolveKeyword),
    Given(T),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum SolveKeyword {
    #[serde(rename = "solve")]
    Solve,
}

impl<T> SolveOr<T> {
    pub fn is_solve(&self) -> bool {
        matches!(self, SolveOr::Solve(_))
    }

    pub fn given(&self) -> Option<&T> {
        match self {
            SolveOr::Given(v) => Some(v),
            SolveOr::Solve(_) => None,
        }
    }
}

/// Scalar (isotropic) or full-matrix covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovarianceValue {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl CovarianceValue {
    pub fn to_matrix(&self, dim: usize) -> Result<DMatrix<f64>, String> {
        match self {
            CovarianceValue::Scalar(s) => {
                if *s <= 0.0 {
                    return Err(format!("covariance must be positive, got {s}"));
                }
                Ok(DMatrix::identity(dim, dim) * *s)
            }
            CovarianceValue::Matrix(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(format!("covariance matrix must be {dim}x{dim}"));
                }
                Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputProfile {
    /// No commanded velocity.
    Zero,
    /// The initial velocity draw held for the whole horizon.
    Constant,
    /// The initial velocity draw held for the first half of the horizon,
    /// then negated (keeps the trajectory inside the arena).
    OutAndBack,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionConfig {
    /// Power spectral density: scalar (isotropic) or `d x d` matrix.
    pub psd: CovarianceValue,
    /// Ground-truth sampling step, seconds.
    #[serde(default = "default_truth_step")]
    pub truth_step_s: f64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    /// Initial positions drawn uniformly per axis from this range.
    #[serde(default = "default_position_range")]
    pub initial_position_range_m: [f64; 2],
    /// Initial velocities drawn uniformly per axis from this range.
    #[serde(default = "default_velocity_range")]
    pub initial_velocity_range_mps: [f64; 2],
    #[serde(default = "default_input_profile")]
    pub input_profile: InputProfile,
}

fn default_truth_step() -> f64 {
    0.01
}
fn default_duration() -> f64 {
    20.0
}
fn default_position_range() -> [f64; 2] {
    [-4.0, 4.0]
}
fn default_velocity_range() -> [f64; 2] {
    [-1.0, 1.0]
}
fn default_input_profile() -> InputProfile {
    InputProfile::OutAndBack
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensorKind {
    Position,
    Range,
    /// No measurements at all; only `pcrb-trace` accepts this.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpreadKind {
    /// Quadrature spread `k_a^2 I` (the accuracy envelope).
    Accuracy,
    /// Point evaluation at the nominal state.
    Zero,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub kind: SensorKind,
    /// Sensor noise: position covariance (scalar or matrix) or range
    /// variance (scalar), or "solve".
    pub covariance: SolveOr<CovarianceValue>,
    /// Anchor positions for range sensors.
    #[serde(default)]
    pub anchors: Vec<Vec<f64>>,
    #[serde(default = "default_quadrature_order")]
    pub quadrature_order: usize,
    #[serde(default = "default_spread")]
    pub spread: SpreadKind,
    /// Solve for `x I` instead of a full position precision matrix.
    #[serde(default)]
    pub isotropic_restriction: bool,
}

fn default_quadrature_order() -> usize {
    3
}
fn default_spread() -> SpreadKind {
    SpreadKind::Accuracy
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    Constant,
    PerStep,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub rate_hz: SolveOr<f64>,
    #[serde(default = "default_schedule_mode")]
    pub mode: ScheduleMode,
}

fn default_schedule_mode() -> ScheduleMode {
    ScheduleMode::Constant
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialsConfig {
    #[serde(default = "default_trials")]
    pub count: usize,
    #[serde(default = "default_seed")]
    pub base_seed: u64,
}

fn default_trials() -> usize {
    10
}
fn default_seed() -> u64 {
    1
}

impl Default for TrialsConfig {
    fn default() -> Self {
        Self {
            count: default_trials(),
            base_seed: default_seed(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub directory: String,
    /// Any of "csv", "json", "dat".
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
    /// When false (the default) wall times are written as zero so that
    /// reruns with the same config and seed are byte-identical.
    #[serde(default)]
    pub record_timings: bool,
    #[serde(default = "default_suboptimal_factor")]
    pub suboptimal_rate_divisor: f64,
    #[serde(default = "default_suboptimal_factor")]
    pub suboptimal_cov_factor: f64,
}

fn default_out_dir() -> String {
    "out".into()
}
fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into()]
}
fn default_suboptimal_factor() -> f64 {
    3.0
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: default_out_dir(),
            formats: default_formats(),
            record_timings: false,
            suboptimal_rate_divisor: default_suboptimal_factor(),
            suboptimal_cov_factor: default_suboptimal_factor(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dimension: usize,
    pub motion: MotionConfig,
    pub sensor: SensorConfig,
    pub accuracy: AccuracyConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub trials: TrialsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccuracyConfig {
    pub grid: Vec<f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| format!("config parse error: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }
        if self.dimension == 0 {
            return Err("dimension: must be >= 1".into());
        }
        if self.accuracy.grid.is_empty() {
            return Err("accuracy.grid: must not be empty".into());
        }
        for ka in &self.accuracy.grid {
            if !(*ka > 0.0) {
                return Err(format!("accuracy.grid: accuracy must be positive, got {ka}"));
            }
        }
        if self.trials.count == 0 {
            return Err("trials.count: must be >= 1".into());
        }
        if !(self.motion.truth_step_s > 0.0) {
            return Err("motion.truth_step_s: must be positive".into());
        }
        if !(self.motion.duration_s > 0.0) {
            return Err("motion.duration_s: must be positive".into());
        }
        let [plo, phi] = self.motion.initial_position_range_m;
        if phi < plo {
            return Err("motion.initial_position_range_m: empty range".into());
        }
        let [vlo, vhi] = self.motion.initial_velocity_range_mps;
        if vhi < vlo {
            return Err("motion.initial_velocity_range_mps: empty range".into());
        }
        self.motion
            .psd
            .to_matrix(self.dimension)
            .map_err(|e| format!("motion.psd: {e}"))?;
        if self.sensor.quadrature_order == 0 {
            return Err("sensor.quadrature_order: must be >= 1".into());
        }
        match self.sensor.kind {
            SensorKind::Range => {
                if self.sensor.anchors.is_empty() {
                    return Err("sensor.anchors: range sensors need anchors".into());
                }
                for (i, a) in self.sensor.anchors.iter().enumerate() {
                    if a.len() != self.dimension {
                        return Err(format!(
                            "sensor.anchors[{i}]: expected {} coordinates, got {}",
                            self.dimension,
                            a.len()
                        ));
                    }
                }
                if let Some(CovarianceValue::Matrix(_)) = self.sensor.covariance.given() {
                    return Err(
                        "sensor.covariance: range sensors take a scalar variance".into()
                    );
                }
            }
            SensorKind::Position => {}
            SensorKind::None => {
                if self.sensor.covariance.is_solve() || self.schedule.rate_hz.is_solve() {
                    return Err(
                        "sensor.kind 'none' cannot be combined with a solve request".into(),
                    );
                }
            }
        }
        if self.sensor.covariance.is_solve() && self.schedule.rate_hz.is_solve() {
            return Err(
                "at most one of sensor.covariance and schedule.rate_hz may be \"solve\"".into(),
            );
        }
        if let Some(rate) = self.schedule.rate_hz.given() {
            if !(*rate > 0.0) {
                return Err(format!("schedule.rate_hz: must be positive, got {rate}"));
            }
        }
        if !(self.output.suboptimal_rate_divisor > 1.0) {
            return Err("output.suboptimal_rate_divisor: must exceed 1".into());
        }
        if !(self.output.suboptimal_cov_factor > 1.0) {
            return Err("output.suboptimal_cov_factor: must exceed 1".into());
        }
        Ok(())
    }

    pub fn motion_prior(&self) -> Result<MotionPrior, String> {
        let psd = self.motion.psd.to_matrix(self.dimension)?;
        MotionPrior::new(psd).map_err(|e| format!("motion.psd: {e}"))
    }

    pub fn anchors(&self) -> Vec<DVector<f64>> {
        self.sensor
            .anchors
            .iter()
            .map(|a| DVector::from_vec(a.clone()))
            .collect()
    }

    /// Sensor model with the configured covariance (requires a given, not
    /// "solve", covariance). `None` for sensor kind "none".
    pub fn sensor_model(&self) -> Result<Option<SensorModel>, String> {
        let cov = match self.sensor.covariance.given() {
            Some(c) => c,
            None => return Err("sensor.covariance is \"solve\"; no fixed sensor model".into()),
        };
        self.sensor_model_with(cov)
    }

    /// Sensor model with an explicit covariance value.
    pub fn sensor_model_with(&self, cov: &CovarianceValue) -> Result<Option<SensorModel>, String> {
        match self.sensor.kind {
            SensorKind::None => Ok(None),
            SensorKind::Position => {
                let m = cov.to_matrix(self.dimension)?;
                let s = PositionSensor::new(m).map_err(|e| format!("sensor.covariance: {e}"))?;
                Ok(Some(SensorModel::Position(s)))
            }
            SensorKind::Range => {
                let var = match cov {
                    CovarianceValue::Scalar(v) => *v,
                    CovarianceValue::Matrix(_) => {
                        return Err("range sensors take a scalar variance".into())
                    }
                };
                let s = RangeSensor::new(var, self.anchors())
                    .map_err(|e| format!("sensor: {e}"))?;
                Ok(Some(SensorModel::Range(s)))
            }
        }
    }

    pub fn wants_format(&self, fmt: &str) -> bool {
        self.output.formats.iter().any(|f| f == fmt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn minimal_json() -> String {
        r#"{
            "schema_version": 1,
            "dimension": 2,
            "motion": { "psd": 0.001 },
            "sensor": { "kind": "position", "covariance": 0.0064 },
            "accuracy": { "grid": [0.05] },
            "schedule": { "rate_hz": "solve" }
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(&minimal_json()).unwrap();
        assert_eq!(cfg.dimension, 2);
        assert_eq!(cfg.trials.count, 10);
        assert_eq!(cfg.trials.base_seed, 1);
        assert!(!cfg.output.record_timings);
        assert!(cfg.schedule.rate_hz.is_solve());
        assert!(cfg.motion_prior().is_ok());
        assert!(cfg.sensor_model().unwrap().is_some());
    }

    #[test]
    fn rejects_double_solve() {
        let text = minimal_json().replace("0.0064", "\"solve\"");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.contains("at most one"), "{err}");
    }

    #[test]
    fn rejects_nonpositive_accuracy() {
        let text = minimal_json().replace("[0.05]", "[0.05, 0.0]");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.contains("accuracy must be positive"), "{err}");
    }

    #[test]
    fn rejects_unknown_fields() {
        let text = minimal_json().replace("\"dimension\": 2", "\"dimension\": 2, \"bogus\": 1");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn range_needs_anchors() {
        let text = minimal_json().replace("\"position\"", "\"range\"");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.contains("anchors"), "{err}");
    }

    #[test]
    fn matrix_covariance_accepted_for_position() {
        let text = minimal_json().replace("0.0064", "[[0.0064, 0.0], [0.0, 0.0064]]");
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        let model = cfg.sensor_model().unwrap().unwrap();
        match model {
            SensorModel::Position(p) => {
                assert!((p.cov()[(0, 0)] - 0.0064).abs() < 1e-15);
            }
            _ => panic!("expected position sensor"),
        }
    }
}

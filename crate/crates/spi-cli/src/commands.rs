//! Subcommand implementations. Each command loads a validated config,
//! performs its work, and writes deterministic artifacts into the output
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use spi_core::conic::{AccuracySpec, SolveOutcome};
use spi_core::estimator::{build_problem, rmse, solve_gauss_newton, GaussNewtonOptions, MapInit};
use spi_core::motion::{StateSample, Trajectory};
use spi_core::pcrb;
use spi_core::rng::{derive_seed, NoiseMode};
use spi_core::sensors::{MeasurementRecord, MeasurementValue};
use spi_core::solvers::{
    constant_rate_bound_trace, solve_constant_rate, solve_covariance, solve_per_step_schedule,
    CovarianceMode, ScheduleRates,
};

use crate::config::{ExperimentConfig, ScheduleMode, SensorKind};
use crate::experiment::{
    build_trial, query_epochs, run_experiment, simulate_records, solver_options, SweepKind,
};
use crate::report::{
    self, fmt_f64, matrix_entries, CovarianceEntry, Report, ScheduleEntry, StatusReport,
};

/// Command failure categories, mapped to process exit codes by `main`.
#[derive(Debug)]
pub enum CommandError {
    /// Bad configuration or arguments (exit 2).
    Config(String),
    /// Execution failure (exit 4).
    Runtime(String),
}

impl std::fmt::Display for CommandError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CommandError::Config(m) => write!(f, "config error: {m}"),
            CommandError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

pub struct CommandOutcome {
    /// Any requested solve came back infeasible (exit 3 for single-solve
    /// commands).
    pub any_infeasible: bool,
    pub files: Vec<PathBuf>,
}

fn cfgerr(msg: impl Into<String>) -> CommandError {
    CommandError::Config(msg.into())
}

fn runerr(msg: impl Into<String>) -> CommandError {
    CommandError::Runtime(msg.into())
}

fn ensure_out_dir(dir: &Path) -> Result<(), CommandError> {
    fs::create_dir_all(dir).map_err(|e| runerr(format!("create {}: {e}", dir.display())))
}

/// Nominal trajectory for single-solve commands: the ground-truth draw of
/// trial 0 under the configured base seed.
fn nominal_trajectory(
    cfg: &ExperimentConfig,
    seed_override: Option<u64>,
) -> Result<crate::experiment::TrialContext, CommandError> {
    let base = seed_override.unwrap_or(cfg.trials.base_seed);
    build_trial(cfg, derive_seed(base, 0, 0)).map_err(runerr)
}

/// `schedule`: smallest query rate (constant) or per-step rates for every
/// accuracy in the grid.
pub fn cmd_schedule(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<CommandOutcome, CommandError> {
    if !cfg.schedule.rate_hz.is_solve() {
        return Err(cfgerr("schedule.rate_hz: must be \"solve\" for this command"));
    }
    let sensor = cfg
        .sensor_model()
        .map_err(cfgerr)?
        .ok_or_else(|| cfgerr("sensor.kind: 'none' cannot be scheduled"))?;
    let prior = cfg.motion_prior().map_err(cfgerr)?;
    let opts = solver_options(cfg);
    let ctx = nominal_trajectory(cfg, seed_override)?;
    ensure_out_dir(out_dir)?;

    let mut entries = Vec::new();
    let mut any_infeasible = false;
    for &ka in &cfg.accuracy.grid {
        let acc = AccuracySpec::new(ka).map_err(|e| cfgerr(e.to_string()))?;
        let (mode, sol) = match cfg.schedule.mode {
            ScheduleMode::Constant => (
                "constant",
                solve_constant_rate(&prior, &sensor, &acc, &ctx.truth, &opts)
                    .map_err(|e| runerr(e.to_string()))?,
            ),
            ScheduleMode::PerStep => {
                let init = pcrb::initialize(pcrb::InitMode::KnownState {
                    accuracy: ka,
                    dim: cfg.dimension,
                })
                .map_err(|e| runerr(e.to_string()))?;
                (
                    "per-step",
                    solve_per_step_schedule(&prior, &sensor, &acc, &ctx.truth, init, None, &opts)
                        .map_err(|e| runerr(e.to_string()))?,
                )
            }
        };
        any_infeasible |= sol.status.outcome == SolveOutcome::Infeasible;
        let (rate_hz, rates) = match &sol.rates {
            ScheduleRates::Constant(m) => (Some(fmt_f64(*m)), None),
            ScheduleRates::PerStep(list) => (
                None,
                Some(
                    list.iter()
                        .map(|(t, m)| (fmt_f64(*t), fmt_f64(*m)))
                        .collect(),
                ),
            ),
        };
        entries.push(ScheduleEntry {
            ka: fmt_f64(ka),
            mode: mode.into(),
            rate_hz,
            rates,
            status: StatusReport::new(&sol.status, cfg.output.record_timings),
        });
    }
    let path = out_dir.join("schedule_report.json");
    Report::new("schedule", entries)
        .write(&path)
        .map_err(runerr)?;
    Ok(CommandOutcome {
        any_infeasible,
        files: vec![path],
    })
}

/// `covariance`: loosest sensor covariance for the given query rate.
pub fn cmd_covariance(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<CommandOutcome, CommandError> {
    if !cfg.sensor.covariance.is_solve() {
        return Err(cfgerr(
            "sensor.covariance: must be \"solve\" for this command",
        ));
    }
    let rate = *cfg
        .schedule
        .rate_hz
        .given()
        .ok_or_else(|| cfgerr("schedule.rate_hz: a fixed rate is required"))?;
    let probe = cfg
        .sensor_model_with(&crate::config::CovarianceValue::Scalar(1.0))
        .map_err(cfgerr)?
        .ok_or_else(|| cfgerr("sensor.kind: 'none' has no covariance"))?;
    let prior = cfg.motion_prior().map_err(cfgerr)?;
    let opts = solver_options(cfg);
    let ctx = nominal_trajectory(cfg, seed_override)?;
    ensure_out_dir(out_dir)?;

    let mode = match cfg.schedule.mode {
        ScheduleMode::Constant => CovarianceMode::Constant,
        ScheduleMode::PerStep => CovarianceMode::PerStep,
    };
    let mut entries = Vec::new();
    let mut any_infeasible = false;
    for &ka in &cfg.accuracy.grid {
        let acc = AccuracySpec::new(ka).map_err(|e| cfgerr(e.to_string()))?;
        let sol = solve_covariance(&prior, &probe, rate, &acc, &ctx.truth, mode, &opts)
            .map_err(|e| runerr(e.to_string()))?;
        any_infeasible |= sol.status.outcome == SolveOutcome::Infeasible;
        entries.push(CovarianceEntry {
            ka: fmt_f64(ka),
            mode: match mode {
                CovarianceMode::Constant => "constant".into(),
                CovarianceMode::PerStep => "per-step".into(),
            },
            precision: sol
                .precisions
                .iter()
                .map(|(_, x)| matrix_entries(x))
                .collect(),
            implied_covariance: sol
                .implied_covs
                .iter()
                .map(|c| c.as_ref().map(matrix_entries))
                .collect(),
            status: StatusReport::new(&sol.status, cfg.output.record_timings),
        });
    }
    let path = out_dir.join("covariance_report.json");
    Report::new("covariance", entries)
        .write(&path)
        .map_err(runerr)?;
    Ok(CommandOutcome {
        any_infeasible,
        files: vec![path],
    })
}

/// `pcrb-trace`: per-epoch worst-direction bound at the resolved schedule.
pub fn cmd_pcrb_trace(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<CommandOutcome, CommandError> {
    let prior = cfg.motion_prior().map_err(cfgerr)?;
    let opts = solver_options(cfg);
    let ctx = nominal_trajectory(cfg, seed_override)?;
    ensure_out_dir(out_dir)?;

    let mut files = Vec::new();
    let mut any_infeasible = false;
    for &ka in &cfg.accuracy.grid {
        let acc = AccuracySpec::new(ka).map_err(|e| cfgerr(e.to_string()))?;
        let trace = match cfg.sensor.kind {
            SensorKind::None => {
                // Pure prediction: the bound decays under process noise.
                let rate = *cfg
                    .schedule
                    .rate_hz
                    .given()
                    .ok_or_else(|| cfgerr("schedule.rate_hz: required for sensor 'none'"))?;
                let dt = 1.0 / rate;
                let zero = nalgebra::DMatrix::zeros(cfg.dimension, cfg.dimension);
                let mut state = pcrb::initialize(pcrb::InitMode::KnownState {
                    accuracy: ka,
                    dim: cfg.dimension,
                })
                .map_err(|e| runerr(e.to_string()))?;
                let mut trace = vec![state.clone()];
                while state.time + dt <= cfg.motion.duration_s + 1e-9 {
                    let blocks = pcrb::assemble_dblocks(&prior, &zero, dt)
                        .map_err(|e| runerr(e.to_string()))?;
                    state = pcrb::recurse(&state, &blocks).map_err(|e| runerr(e.to_string()))?;
                    trace.push(state.clone());
                }
                trace
            }
            _ => {
                let sensor = cfg
                    .sensor_model()
                    .map_err(cfgerr)?
                    .expect("kind checked above");
                let rate = match cfg.schedule.rate_hz.given() {
                    Some(r) => *r,
                    None => {
                        let sol = solve_constant_rate(&prior, &sensor, &acc, &ctx.truth, &opts)
                            .map_err(|e| runerr(e.to_string()))?;
                        if sol.status.outcome != SolveOutcome::Optimal {
                            any_infeasible = true;
                            continue;
                        }
                        sol.constant_rate().expect("constant mode")
                    }
                };
                constant_rate_bound_trace(&prior, &sensor, &acc, &ctx.truth, rate, &opts)
                    .map_err(|e| runerr(e.to_string()))?
            }
        };
        let mut csv = String::from("t_s,bound_max_error_variance_m2\n");
        for s in &trace {
            csv.push_str(&format!(
                "{},{}\n",
                fmt_f64(s.time),
                fmt_f64(s.max_error_variance())
            ));
        }
        let path = out_dir.join(format!("pcrb_trace_ka{ka:.6}.csv"));
        report::write_text(&path, &csv).map_err(runerr)?;
        files.push(path);
    }
    Ok(CommandOutcome {
        any_infeasible,
        files,
    })
}

const TRAJECTORY_FILE: &str = "trajectory.csv";
const MEASUREMENTS_FILE: &str = "measurements.csv";

fn trajectory_csv(truth: &Trajectory, dim: usize) -> String {
    let mut header = String::from("time_s");
    for k in 0..dim {
        header.push_str(&format!(",pos{k}"));
    }
    for k in 0..dim {
        header.push_str(&format!(",input{k}"));
    }
    let mut out = header;
    out.push('\n');
    for s in truth.samples() {
        out.push_str(&fmt_f64(s.time));
        for k in 0..dim {
            out.push_str(&format!(",{}", fmt_f64(s.position[k])));
        }
        for k in 0..dim {
            out.push_str(&format!(",{}", fmt_f64(s.velocity_input[k])));
        }
        out.push('\n');
    }
    out
}

fn measurements_csv(records: &[MeasurementRecord]) -> String {
    let mut out = String::from("time_s,kind,anchor_index,value0,value1,value2\n");
    for r in records {
        match &r.value {
            MeasurementValue::Position(v) => {
                let mut vals = ["", "", ""].map(String::from);
                for (k, slot) in vals.iter_mut().enumerate().take(v.len().min(3)) {
                    *slot = fmt_f64(v[k]);
                }
                out.push_str(&format!(
                    "{},position,,{},{},{}\n",
                    fmt_f64(r.time),
                    vals[0],
                    vals[1],
                    vals[2]
                ));
            }
            MeasurementValue::Range(d) => {
                out.push_str(&format!(
                    "{},range,{},{},,\n",
                    fmt_f64(r.time),
                    r.anchor_index.unwrap_or(0),
                    fmt_f64(*d)
                ));
            }
        }
    }
    out
}

/// `simulate`: one seeded trial's ground truth and measurement records.
pub fn cmd_simulate(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<CommandOutcome, CommandError> {
    let rate = *cfg
        .schedule
        .rate_hz
        .given()
        .ok_or_else(|| cfgerr("schedule.rate_hz: a fixed rate is required to simulate"))?;
    let sensor = cfg
        .sensor_model()
        .map_err(cfgerr)?
        .ok_or_else(|| cfgerr("sensor.kind: 'none' produces no measurements"))?;
    let prior = cfg.motion_prior().map_err(cfgerr)?;
    let ctx = nominal_trajectory(cfg, seed_override)?;
    ensure_out_dir(out_dir)?;

    let epochs = query_epochs(rate, cfg.motion.duration_s);
    let truth = prior
        .refine_trajectory(
            &ctx.truth,
            &epochs,
            derive_seed(ctx.trial_seed, 3, 0),
            NoiseMode::Sampled,
        )
        .map_err(|e| runerr(e.to_string()))?;
    let records = simulate_records(&sensor, &truth, &epochs, derive_seed(ctx.trial_seed, 4, 0))
        .map_err(runerr)?;

    let traj_path = out_dir.join(TRAJECTORY_FILE);
    let meas_path = out_dir.join(MEASUREMENTS_FILE);
    report::write_text(&traj_path, &trajectory_csv(&truth, cfg.dimension)).map_err(runerr)?;
    report::write_text(&meas_path, &measurements_csv(&records)).map_err(runerr)?;
    Ok(CommandOutcome {
        any_infeasible: false,
        files: vec![traj_path, meas_path],
    })
}

fn parse_f64(field: &str, line_no: usize) -> Result<f64, CommandError> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| runerr(format!("line {line_no}: bad number {field:?}: {e}")))
}

fn read_measurements(path: &Path, dim: usize) -> Result<Vec<MeasurementRecord>, CommandError> {
    let text =
        fs::read_to_string(path).map_err(|e| runerr(format!("read {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(runerr(format!("line {}: too few fields", i + 1)));
        }
        let time = parse_f64(fields[0], i + 1)?;
        match fields[1].trim() {
            "position" => {
                let mut v = Vec::with_capacity(dim);
                for k in 0..dim {
                    v.push(parse_f64(fields[3 + k], i + 1)?);
                }
                records.push(MeasurementRecord {
                    time,
                    value: MeasurementValue::Position(DVector::from_vec(v)),
                    anchor_index: None,
                });
            }
            "range" => {
                let anchor = fields[2]
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| runerr(format!("line {}: bad anchor index: {e}", i + 1)))?;
                records.push(MeasurementRecord {
                    time,
                    value: MeasurementValue::Range(parse_f64(fields[3], i + 1)?),
                    anchor_index: Some(anchor),
                });
            }
            other => return Err(runerr(format!("line {}: unknown kind {other:?}", i + 1))),
        }
    }
    if records.is_empty() {
        return Err(runerr(format!("{}: no measurement rows", path.display())));
    }
    Ok(records)
}

fn read_trajectory(path: &Path, dim: usize) -> Result<Trajectory, CommandError> {
    let text =
        fs::read_to_string(path).map_err(|e| runerr(format!("read {}: {e}", path.display())))?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 1 + 2 * dim {
            return Err(runerr(format!("line {}: too few fields", i + 1)));
        }
        let time = parse_f64(fields[0], i + 1)?;
        let mut pos = Vec::with_capacity(dim);
        let mut inp = Vec::with_capacity(dim);
        for k in 0..dim {
            pos.push(parse_f64(fields[1 + k], i + 1)?);
            inp.push(parse_f64(fields[1 + dim + k], i + 1)?);
        }
        samples.push(StateSample {
            time,
            position: DVector::from_vec(pos),
            velocity_input: DVector::from_vec(inp),
        });
    }
    Trajectory::new(samples, 0).map_err(|e| runerr(e.to_string()))
}

#[derive(serde::Serialize)]
struct EstimateReport {
    schema_version: u32,
    command: String,
    converged: bool,
    iterations: usize,
    final_cost: String,
    grad_norm: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    rmse_m: Option<String>,
}

/// `estimate`: batch MAP over a measurement file, optionally scored
/// against a ground-truth trajectory file.
pub fn cmd_estimate(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    measurements_path: Option<&Path>,
    truth_path: Option<&Path>,
) -> Result<CommandOutcome, CommandError> {
    let sensor = cfg
        .sensor_model()
        .map_err(cfgerr)?
        .ok_or_else(|| cfgerr("sensor.kind: 'none' cannot estimate"))?;
    let prior = cfg.motion_prior().map_err(cfgerr)?;
    ensure_out_dir(out_dir)?;

    let meas_path = measurements_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_dir.join(MEASUREMENTS_FILE));
    let records = read_measurements(&meas_path, cfg.dimension)?;

    let default_truth = out_dir.join(TRAJECTORY_FILE);
    let truth = match truth_path {
        Some(p) => Some(read_trajectory(p, cfg.dimension)?),
        None if default_truth.exists() => Some(read_trajectory(&default_truth, cfg.dimension)?),
        None => None,
    };

    // Inputs travel with the truth file when present; otherwise the prior
    // factors fall back to pure smoothness (zero input).
    let dim = cfg.dimension;
    let input = |t: f64| -> DVector<f64> {
        match &truth {
            Some(tr) => {
                let idx = tr
                    .samples()
                    .partition_point(|s| s.time <= t + 1e-9)
                    .saturating_sub(1);
                tr.samples()[idx].velocity_input.clone()
            }
            None => DVector::zeros(dim),
        }
    };
    let problem = build_problem(&prior, &sensor, &records, &input, MapInit::Free, None, &[])
        .map_err(|e| runerr(e.to_string()))?;
    let result = solve_gauss_newton(&problem, &GaussNewtonOptions::default())
        .map_err(|e| runerr(e.to_string()))?;

    let rmse_m = match &truth {
        Some(tr) => Some(rmse(&result.estimate, tr).map_err(|e| runerr(e.to_string()))?),
        None => None,
    };

    let est_path = out_dir.join("estimate.csv");
    report::write_text(&est_path, &trajectory_csv(&result.estimate, cfg.dimension))
        .map_err(runerr)?;
    let report_path = out_dir.join("estimate_report.json");
    let rep = EstimateReport {
        schema_version: crate::config::SCHEMA_VERSION,
        command: "estimate".into(),
        converged: result.converged,
        iterations: result.iterations,
        final_cost: fmt_f64(result.final_cost),
        grad_norm: fmt_f64(result.grad_norm),
        rmse_m: rmse_m.map(fmt_f64),
    };
    let text =
        serde_json::to_string_pretty(&rep).map_err(|e| runerr(format!("serialize: {e}")))?;
    report::write_text(&report_path, &(text + "\n")).map_err(runerr)?;
    Ok(CommandOutcome {
        any_infeasible: false,
        files: vec![est_path, report_path],
    })
}

/// `experiment`: the full sweep; CSV rows, per-point means, and optional
/// gnuplot data files.
pub fn cmd_experiment(
    cfg: &ExperimentConfig,
    kind: SweepKind,
    out_dir: &Path,
    seed_override: Option<u64>,
    jobs: Option<usize>,
) -> Result<CommandOutcome, CommandError> {
    match kind {
        SweepKind::RateSweep => {
            if !cfg.schedule.rate_hz.is_solve() {
                return Err(cfgerr("schedule.rate_hz: must be \"solve\" for a rate sweep"));
            }
        }
        SweepKind::CovarianceSweep => {
            if !cfg.sensor.covariance.is_solve() {
                return Err(cfgerr(
                    "sensor.covariance: must be \"solve\" for a covariance sweep",
                ));
            }
            if cfg.schedule.rate_hz.given().is_none() {
                return Err(cfgerr(
                    "schedule.rate_hz: a fixed rate is required for a covariance sweep",
                ));
            }
        }
    }
    if cfg.sensor.kind == SensorKind::None {
        return Err(cfgerr("sensor.kind: 'none' cannot run experiments"));
    }
    ensure_out_dir(out_dir)?;
    let out = run_experiment(cfg, kind, seed_override, jobs).map_err(runerr)?;

    let mut files = Vec::new();
    if cfg.wants_format("csv") {
        let results_path = out_dir.join("results.csv");
        report::write_text(
            &results_path,
            &report::results_csv(&out.rows, cfg.output.record_timings),
        )
        .map_err(runerr)?;
        let summary_path = out_dir.join("summary.csv");
        report::write_text(&summary_path, &report::summary_csv(&out.summary)).map_err(runerr)?;
        files.push(results_path);
        files.push(summary_path);
    }
    if cfg.wants_format("dat") {
        for variant in ["optimal", "suboptimal"] {
            let path = out_dir.join(format!("rmse_vs_ka_{variant}.dat"));
            report::write_text(&path, &report::plot_data(&out.summary, variant))
                .map_err(runerr)?;
            files.push(path);
        }
    }
    Ok(CommandOutcome {
        any_infeasible: out.rows.iter().any(|r| r.status == "infeasible"),
        files,
    })
}

//! The simulate -> schedule -> measure -> estimate -> evaluate loop.
//!
//! Each trial samples a ground-truth trajectory from the motion prior,
//! identifies the sensor parameter under test (query rate or covariance),
//! simulates measurements at the identified and at a deliberately degraded
//! ("suboptimal") parameter, runs batch MAP estimation on both, and records
//! RMSE against the ground truth.
//!
//! Trials are embarrassingly parallel: every random stream is derived from
//! `(base seed, accuracy index, trial index)` plus a fixed role salt, and
//! rows are merged in index order, so results do not depend on thread
//! count or completion order.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use spi_core::conic::{AccuracySpec, SolveOutcome};
use spi_core::estimator::{build_problem, rmse, solve_gauss_newton, GaussNewtonOptions, MapInit};
use spi_core::motion::Trajectory;
use spi_core::rng::{derive_seed, GaussianStream, NoiseMode};
use spi_core::sensors::{MeasurementRecord, PositionSensor, RangeSensor, SensorModel};
use spi_core::solvers::{
    solve_constant_rate, solve_covariance, CovarianceMode, SolverOptions, SpreadPolicy,
};
use spi_core::MotionPrior;

use crate::config::{ExperimentConfig, InputProfile, SensorKind, SpreadKind};
use crate::report::{matrix_values, ResultRow, SummaryRow};

// Stream role salts (second argument of the per-role seed derivation).
const SALT_DRAW: u64 = 1;
const SALT_TRUTH: u64 = 2;
const SALT_REFINE: u64 = 3;
const SALT_MEAS: u64 = 4;
const SALT_INIT: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    RateSweep,
    CovarianceSweep,
}

/// Commanded-velocity signal: piecewise constant, known to the estimator.
#[derive(Debug, Clone)]
pub struct InputSignal {
    pub profile: InputProfile,
    pub u0: DVector<f64>,
    /// Profile switch time (out-and-back negates the velocity here).
    pub switch_time: f64,
}

impl InputSignal {
    pub fn eval(&self, t: f64) -> DVector<f64> {
        match self.profile {
            InputProfile::Zero => DVector::zeros(self.u0.len()),
            InputProfile::Constant => self.u0.clone(),
            InputProfile::OutAndBack => {
                if t < self.switch_time - 1e-12 {
                    self.u0.clone()
                } else {
                    -&self.u0
                }
            }
        }
    }
}

/// Ground truth plus the sampled commanded input of one trial.
pub struct TrialContext {
    pub truth: Trajectory,
    pub input: InputSignal,
    pub trial_seed: u64,
}

/// Fine sampling grid for ground truth: the configured step, with the
/// profile switch time and the horizon end always included so the input is
/// exactly piecewise constant over grid intervals.
fn truth_grid(cfg: &ExperimentConfig) -> Vec<f64> {
    let step = cfg.motion.truth_step_s;
    let duration = cfg.motion.duration_s;
    let mut grid: Vec<f64> = Vec::with_capacity((duration / step) as usize + 3);
    let mut k = 0u64;
    loop {
        let t = k as f64 * step;
        if t > duration - 1e-9 {
            break;
        }
        grid.push(t);
        k += 1;
    }
    grid.push(duration);
    if cfg.motion.input_profile == InputProfile::OutAndBack {
        grid.push(duration / 2.0);
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    grid
}

/// Samples the trial's ground truth on the fine grid.
pub fn build_trial(cfg: &ExperimentConfig, trial_seed: u64) -> Result<TrialContext, String> {
    let prior = cfg.motion_prior()?;
    let dim = cfg.dimension;
    let mut draw = GaussianStream::new(derive_seed(trial_seed, SALT_DRAW, 0));
    let [plo, phi] = cfg.motion.initial_position_range_m;
    let [vlo, vhi] = cfg.motion.initial_velocity_range_mps;
    let x0 = DVector::from_fn(dim, |_, _| draw.next_range(plo, phi));
    let u0 = DVector::from_fn(dim, |_, _| draw.next_range(vlo, vhi));
    let input = InputSignal {
        profile: cfg.motion.input_profile,
        u0,
        switch_time: cfg.motion.duration_s / 2.0,
    };
    let grid = truth_grid(cfg);
    let input_ref = input.clone();
    let truth = prior
        .sample_trajectory(
            &x0,
            &move |t| input_ref.eval(t),
            &grid,
            derive_seed(trial_seed, SALT_TRUTH, 0),
            NoiseMode::Sampled,
        )
        .map_err(|e| format!("trajectory sampling: {e}"))?;
    Ok(TrialContext {
        truth,
        input,
        trial_seed,
    })
}

pub fn solver_options(cfg: &ExperimentConfig) -> SolverOptions {
    SolverOptions {
        quadrature_order: cfg.sensor.quadrature_order,
        with_bound_trace: false,
        spread: match cfg.sensor.spread {
            SpreadKind::Accuracy => SpreadPolicy::Accuracy,
            SpreadKind::Zero => SpreadPolicy::Zero,
        },
        isotropic_position: cfg.sensor.isotropic_restriction,
        ..SolverOptions::default()
    }
}

/// Query epochs of a constant-rate schedule over `[0, duration]`,
/// including the initial epoch.
pub fn query_epochs(rate: f64, duration: f64) -> Vec<f64> {
    let mut times = Vec::with_capacity((duration * rate) as usize + 2);
    let mut j = 0u64;
    loop {
        let t = j as f64 / rate;
        if t > duration + 1e-9 {
            break;
        }
        times.push(t.min(duration));
        j += 1;
    }
    times
}

/// Simulates one trial's measurements at the given epochs.
pub fn simulate_records(
    sensor: &SensorModel,
    truth: &Trajectory,
    epochs: &[f64],
    seed: u64,
) -> Result<Vec<MeasurementRecord>, String> {
    let mut stream = GaussianStream::new(seed);
    let mut records = Vec::new();
    for &t in epochs {
        let x = truth
            .sample_at(t)
            .map(|s| s.position.clone())
            .ok_or_else(|| format!("truth has no sample at query epoch {t}"))?;
        records.extend(
            sensor
                .simulate_measurement(&x, t, &mut stream, NoiseMode::Sampled)
                .map_err(|e| format!("measurement simulation: {e}"))?,
        );
    }
    Ok(records)
}

/// Runs batch MAP on one variant's measurements and evaluates RMSE.
///
/// The estimator is anchored by an accuracy-consistent initial prior:
/// mean = true initial state plus `N(0, ka^2 I)` noise, covariance
/// `ka^2 I`, matching the stationary information `ka^{-2} I` assumed by
/// the constant-parameter solvers.
#[allow(clippy::too_many_arguments)]
fn estimate_variant(
    prior: &MotionPrior,
    sensor: &SensorModel,
    truth: &Trajectory,
    input: &InputSignal,
    records: &[MeasurementRecord],
    ka: f64,
    init_seed: u64,
    horizon: (f64, f64),
) -> Result<f64, String> {
    let dim = prior.dim();
    let mut init_stream = GaussianStream::new(init_seed);
    let x0_true = truth
        .position_at(horizon.0)
        .map_err(|e| format!("truth start: {e}"))?;
    let init_mean = &x0_true + init_stream.next_standard_vector(dim) * ka;
    // The commanded velocity must be constant across every prior-factor
    // interval, so profile switch points become states of their own.
    let extra_states: Vec<f64> = match input.profile {
        InputProfile::OutAndBack => vec![input.switch_time],
        _ => Vec::new(),
    };
    let problem = build_problem(
        prior,
        sensor,
        records,
        &|t| input.eval(t),
        MapInit::Prior {
            time: horizon.0,
            mean: init_mean,
            cov: DMatrix::identity(dim, dim) * (ka * ka),
        },
        Some(horizon),
        &extra_states,
    )
    .map_err(|e| format!("problem construction: {e}"))?;
    let result = solve_gauss_newton(&problem, &GaussNewtonOptions::default())
        .map_err(|e| format!("estimation: {e}"))?;
    if !result.converged {
        return Err(format!(
            "estimator did not converge (gradient {:.3e} after {} iterations)",
            result.grad_norm, result.iterations
        ));
    }
    rmse(&result.estimate, truth).map_err(|e| format!("rmse: {e}"))
}

fn suboptimal_sensor(sensor: &SensorModel, factor: f64) -> Result<SensorModel, String> {
    match sensor {
        SensorModel::Position(p) => Ok(SensorModel::Position(
            PositionSensor::new(p.cov() * factor).map_err(|e| e.to_string())?,
        )),
        SensorModel::Range(r) => Ok(SensorModel::Range(
            RangeSensor::new(r.variance() * factor, r.anchors().to_vec())
                .map_err(|e| e.to_string())?,
        )),
    }
}

/// All rows of one `(accuracy, trial)` cell.
fn run_cell(
    cfg: &ExperimentConfig,
    kind: SweepKind,
    base_seed: u64,
    ika: usize,
    trial: usize,
) -> Result<Vec<ResultRow>, String> {
    let ka = cfg.accuracy.grid[ika];
    let acc = AccuracySpec::new(ka).map_err(|e| e.to_string())?;
    let prior = cfg.motion_prior()?;
    let opts = solver_options(cfg);
    let trial_seed = derive_seed(base_seed, ika as u64, trial as u64);
    let ctx = build_trial(cfg, trial_seed)?;
    let duration = cfg.motion.duration_s;

    match kind {
        SweepKind::RateSweep => {
            let sensor = cfg
                .sensor_model()?
                .ok_or_else(|| "rate sweep needs a measuring sensor".to_string())?;
            let sol = solve_constant_rate(&prior, &sensor, &acc, &ctx.truth, &opts)
                .map_err(|e| format!("rate solve: {e}"))?;
            if sol.status.outcome != SolveOutcome::Optimal {
                return Ok(vec![ResultRow {
                    ka,
                    variant: "optimal",
                    trial,
                    solved_rate_hz: sol.constant_rate(),
                    solved_cov: None,
                    rmse_m: None,
                    status: sol.status.outcome.as_str().into(),
                    solver_time_s: sol.status.wall_time,
                }]);
            }
            let m_s = sol.constant_rate().expect("constant mode");
            let m_sub = m_s / cfg.output.suboptimal_rate_divisor;
            let epochs_opt = query_epochs(m_s, duration);
            let epochs_sub = query_epochs(m_sub, duration);
            let mut extra: Vec<f64> = epochs_opt.iter().chain(&epochs_sub).cloned().collect();
            extra.sort_by(f64::total_cmp);
            extra.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
            let truth = prior
                .refine_trajectory(
                    &ctx.truth,
                    &extra,
                    derive_seed(trial_seed, SALT_REFINE, 0),
                    NoiseMode::Sampled,
                )
                .map_err(|e| format!("truth refinement: {e}"))?;

            let mut rows = Vec::with_capacity(2);
            for (vi, (variant, epochs)) in [("optimal", &epochs_opt), ("suboptimal", &epochs_sub)]
                .into_iter()
                .enumerate()
            {
                let records = simulate_records(
                    &sensor,
                    &truth,
                    epochs,
                    derive_seed(trial_seed, SALT_MEAS, vi as u64),
                )?;
                let rmse_m = match estimate_variant(
                    &prior,
                    &sensor,
                    &truth,
                    &ctx.input,
                    &records,
                    ka,
                    derive_seed(trial_seed, SALT_INIT, vi as u64),
                    (0.0, duration),
                ) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        eprintln!("warning: ka={ka} trial={trial} {variant}: {e}");
                        None
                    }
                };
                rows.push(ResultRow {
                    ka,
                    variant,
                    trial,
                    solved_rate_hz: Some(m_s),
                    solved_cov: None,
                    rmse_m,
                    status: sol.status.outcome.as_str().into(),
                    solver_time_s: sol.status.wall_time,
                });
            }
            Ok(rows)
        }
        SweepKind::CovarianceSweep => {
            let rate = *cfg
                .schedule
                .rate_hz
                .given()
                .ok_or_else(|| "covariance sweep needs a given schedule.rate_hz".to_string())?;
            // A unit-noise stand-in carries the sensor kind and geometry;
            // the solver only uses its anchors/kind, not its variance.
            let probe = cfg
                .sensor_model_with(&crate::config::CovarianceValue::Scalar(1.0))?
                .ok_or_else(|| "covariance sweep needs a measuring sensor".to_string())?;
            let sol = solve_covariance(
                &prior,
                &probe,
                rate,
                &acc,
                &ctx.truth,
                CovarianceMode::Constant,
                &opts,
            )
            .map_err(|e| format!("covariance solve: {e}"))?;
            let solved_cov_entries = sol.implied_covs.first().and_then(|c| {
                c.as_ref().map(matrix_values)
            });
            if sol.status.outcome != SolveOutcome::Optimal {
                return Ok(vec![ResultRow {
                    ka,
                    variant: "optimal",
                    trial,
                    solved_rate_hz: None,
                    solved_cov: solved_cov_entries,
                    rmse_m: None,
                    status: sol.status.outcome.as_str().into(),
                    solver_time_s: sol.status.wall_time,
                }]);
            }
            let Some(implied) = sol.implied_covs[0].clone() else {
                // Zero precision (accuracy trivially held): nothing to
                // simulate, record the solve itself.
                return Ok(vec![ResultRow {
                    ka,
                    variant: "optimal",
                    trial,
                    solved_rate_hz: None,
                    solved_cov: None,
                    rmse_m: None,
                    status: sol.status.outcome.as_str().into(),
                    solver_time_s: sol.status.wall_time,
                }]);
            };
            let optimal_sensor = match cfg.sensor.kind {
                SensorKind::Position => SensorModel::Position(
                    PositionSensor::new(implied.clone()).map_err(|e| e.to_string())?,
                ),
                SensorKind::Range => SensorModel::Range(
                    RangeSensor::new(implied[(0, 0)], cfg.anchors())
                        .map_err(|e| e.to_string())?,
                ),
                SensorKind::None => unreachable!("validated"),
            };
            let epochs = query_epochs(rate, duration);
            let truth = prior
                .refine_trajectory(
                    &ctx.truth,
                    &epochs,
                    derive_seed(trial_seed, SALT_REFINE, 0),
                    NoiseMode::Sampled,
                )
                .map_err(|e| format!("truth refinement: {e}"))?;

            let suboptimal = suboptimal_sensor(&optimal_sensor, cfg.output.suboptimal_cov_factor)?;
            let mut rows = Vec::with_capacity(2);
            for (vi, (variant, sensor)) in
                [("optimal", &optimal_sensor), ("suboptimal", &suboptimal)]
                    .into_iter()
                    .enumerate()
            {
                let records = simulate_records(
                    sensor,
                    &truth,
                    &epochs,
                    derive_seed(trial_seed, SALT_MEAS, vi as u64),
                )?;
                let rmse_m = match estimate_variant(
                    &prior,
                    sensor,
                    &truth,
                    &ctx.input,
                    &records,
                    ka,
                    derive_seed(trial_seed, SALT_INIT, vi as u64),
                    (0.0, duration),
                ) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        eprintln!("warning: ka={ka} trial={trial} {variant}: {e}");
                        None
                    }
                };
                rows.push(ResultRow {
                    ka,
                    variant,
                    trial,
                    solved_rate_hz: None,
                    solved_cov: solved_cov_entries.clone(),
                    rmse_m,
                    status: sol.status.outcome.as_str().into(),
                    solver_time_s: sol.status.wall_time,
                });
            }
            Ok(rows)
        }
    }
}

pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
}

/// Runs the full sweep; deterministic for a fixed config and seed
/// regardless of `jobs`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    kind: SweepKind,
    seed_override: Option<u64>,
    jobs: Option<usize>,
) -> Result<ExperimentOutput, String> {
    let base_seed = seed_override.unwrap_or(cfg.trials.base_seed);
    let n_ka = cfg.accuracy.grid.len();
    let trials = cfg.trials.count;
    let cells: Vec<(usize, usize)> = (0..n_ka)
        .flat_map(|ika| (0..trials).map(move |t| (ika, t)))
        .collect();

    let compute = || -> Result<Vec<Vec<ResultRow>>, String> {
        cells
            .par_iter()
            .map(|&(ika, trial)| run_cell(cfg, kind, base_seed, ika, trial))
            .collect()
    };
    let per_cell = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| format!("thread pool: {e}"))?
            .install(compute),
        None => compute(),
    }?;

    let rows: Vec<ResultRow> = per_cell.into_iter().flatten().collect();

    // Per-(ka, variant) means over trials with an RMSE.
    let mut summary = Vec::new();
    for ika in 0..n_ka {
        let ka = cfg.accuracy.grid[ika];
        for variant in ["optimal", "suboptimal"] {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.variant == variant && (r.ka - ka).abs() < 1e-12)
                .filter_map(|r| r.rmse_m)
                .collect();
            if values.is_empty() {
                continue;
            }
            summary.push(SummaryRow {
                ka,
                variant: if variant == "optimal" {
                    "optimal"
                } else {
                    "suboptimal"
                },
                trials: values.len(),
                mean_rmse_m: Some(values.iter().sum::<f64>() / values.len() as f64),
            });
        }
    }
    Ok(ExperimentOutput { rows, summary })
}

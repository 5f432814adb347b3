//! Parameter identification along a nominal trajectory.
//!
//! Three procedures, each orchestrating the bound recursion and the conic
//! layer:
//!
//! * [`solve_constant_rate`] — smallest constant query rate holding the
//!   accuracy bound, with the information state pinned at its stationary
//!   value `k_a^{-2} I`;
//! * [`solve_per_step_schedule`] — greedy per-step rates: at each query the
//!   scalar LMI gives the longest admissible gap given the current
//!   information state, which is then advanced through the recursion;
//! * [`solve_covariance`] — loosest sensor precision (A-optimal trace
//!   minimum) for a given query rate, constant or per-step.
//!
//! Range-sensor information varies along the trajectory. For constant
//! parameters the solvers use the pessimistic scalarization
//! `min over samples of lambda_min(E[H^T R^{-1} H])`, applied isotropically,
//! so the guarantee holds at every point of the nominal trajectory at the
//! cost of some conservatism.

use nalgebra::DMatrix;

use crate::conic::{
    self, AccuracySpec, LmiParameterization, PrecisionMap, SdpOptions, SolveOutcome, SolveStatus,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::motion::{MotionPrior, Trajectory};
use crate::pcrb::{self, InfoState};
use crate::sensors::SensorModel;

/// Quadrature spread used when evaluating expected range information.
#[derive(Debug, Clone)]
pub enum SpreadPolicy {
    /// `k_a^2 I`: the state is assumed spread over the accuracy envelope
    /// being enforced (the worst case consistent with the constraint).
    Accuracy,
    /// Point evaluation at the nominal state.
    Zero,
    /// Explicit covariance.
    Fixed(DMatrix<f64>),
}

impl SpreadPolicy {
    fn matrix(&self, acc: &AccuracySpec, dim: usize) -> DMatrix<f64> {
        match self {
            SpreadPolicy::Accuracy => DMatrix::identity(dim, dim) * acc.bound_variance(),
            SpreadPolicy::Zero => DMatrix::zeros(dim, dim),
            SpreadPolicy::Fixed(m) => m.clone(),
        }
    }
}

/// Knobs shared by the solvers.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Initial bisection bracket in Hz (expanded on demand up to the cap).
    pub rate_bracket: (f64, f64),
    pub rate_rel_tol: f64,
    pub quadrature_order: usize,
    pub spread: SpreadPolicy,
    pub sdp: SdpOptions,
    /// Hard cap on per-step schedule length.
    pub max_steps: usize,
    /// Restrict the position-sensor covariance variable to `x I`.
    pub isotropic_position: bool,
    /// Fill `ScheduleSolution::info_trace` after a constant-rate solve
    /// (skip for bulk sweeps and very high rates).
    pub with_bound_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rate_bracket: (1e-6, 1e3),
            rate_rel_tol: conic::BISECT_REL_TOL,
            quadrature_order: 3,
            spread: SpreadPolicy::Accuracy,
            sdp: SdpOptions::default(),
            max_steps: 200_000,
            isotropic_position: false,
            with_bound_trace: true,
        }
    }
}

/// Solved query schedule.
#[derive(Debug, Clone)]
pub enum ScheduleRates {
    Constant(f64),
    /// `(query time, rate in Hz)` per step.
    PerStep(Vec<(f64, f64)>),
}

#[derive(Debug, Clone)]
pub struct ScheduleSolution {
    pub rates: ScheduleRates,
    pub status: SolveStatus,
    /// Predictive information states along the horizon at the solved
    /// schedule (empty when the solve failed).
    pub info_trace: Vec<InfoState>,
}

impl ScheduleSolution {
    pub fn constant_rate(&self) -> Option<f64> {
        match self.rates {
            ScheduleRates::Constant(m) => Some(m),
            ScheduleRates::PerStep(_) => None,
        }
    }
}

/// Solved sensor precision(s).
#[derive(Debug, Clone)]
pub struct CovarianceSolution {
    /// `(query time, precision matrix)`; a single entry in constant mode.
    /// Range precisions are 1x1 (`sigma_r^{-2}`).
    pub precisions: Vec<(f64, DMatrix<f64>)>,
    /// Inverses of the precisions; `None` where the precision is singular
    /// (zero precision: unbounded covariance admissible).
    pub implied_covs: Vec<Option<DMatrix<f64>>>,
    pub status: SolveStatus,
}

impl CovarianceSolution {
    /// Constant-mode precision matrix.
    pub fn constant_precision(&self) -> Option<&DMatrix<f64>> {
        if self.precisions.len() == 1 {
            Some(&self.precisions[0].1)
        } else {
            None
        }
    }
}

/// Per-query expected information at one trajectory point.
fn info_at(
    sensor: &SensorModel,
    nominal: &Trajectory,
    t: f64,
    acc: &AccuracySpec,
    opts: &SolverOptions,
) -> Result<DMatrix<f64>> {
    let x = nominal.position_at(t)?;
    let spread = opts.spread.matrix(acc, sensor.dim());
    sensor.expected_information(&x, &spread, opts.quadrature_order)
}

/// Pessimistic constant-parameter information: the smallest eigenvalue of
/// the expected information over all nominal samples, as an isotropic
/// matrix. Position sensors are state-independent and returned exactly.
pub fn worst_case_sensor_info(
    sensor: &SensorModel,
    nominal: &Trajectory,
    acc: &AccuracySpec,
    opts: &SolverOptions,
) -> Result<DMatrix<f64>> {
    match sensor {
        SensorModel::Position(p) => Ok(p.precision().clone()),
        SensorModel::Range(_) => {
            let spread = opts.spread.matrix(acc, sensor.dim());
            let mut w_min = f64::INFINITY;
            for s in nominal.samples() {
                let info =
                    sensor.expected_information(&s.position, &spread, opts.quadrature_order)?;
                w_min = w_min.min(linalg::min_eigenvalue(&info));
            }
            Ok(DMatrix::identity(sensor.dim(), sensor.dim()) * w_min.max(0.0))
        }
    }
}

fn check_anchor_count(sensor: &SensorModel) -> Result<()> {
    if let SensorModel::Range(r) = sensor {
        if r.anchors().len() < r.dim() {
            return Err(Error::UnderConstrained(format!(
                "{}-dimensional scheduling needs at least {} range anchors, got {}",
                r.dim(),
                r.dim(),
                r.anchors().len()
            )));
        }
    }
    Ok(())
}

/// Smallest constant query rate holding the accuracy bound along the
/// nominal trajectory.
pub fn solve_constant_rate(
    prior: &MotionPrior,
    sensor: &SensorModel,
    acc: &AccuracySpec,
    nominal: &Trajectory,
    opts: &SolverOptions,
) -> Result<ScheduleSolution> {
    check_anchor_count(sensor)?;
    let d = prior.dim();
    let sensor_info = worst_case_sensor_info(sensor, nominal, acc, opts)?;
    let stationary = pcrb::initialize(pcrb::InitMode::KnownState {
        accuracy: acc.ka(),
        dim: d,
    })?;
    let lmi = conic::build_lmi(
        &stationary,
        prior,
        LmiParameterization::ScalarRate { sensor_info },
        acc,
    )?;
    let (rate, status) = conic::minimize_scalar(&lmi, opts.rate_bracket, opts.rate_rel_tol)?;

    let mut info_trace = Vec::new();
    if opts.with_bound_trace && status.outcome == SolveOutcome::Optimal {
        info_trace = constant_rate_bound_trace(prior, sensor, acc, nominal, rate, opts)?;
    }
    Ok(ScheduleSolution {
        rates: ScheduleRates::Constant(rate),
        status,
        info_trace,
    })
}

/// Runs the bound recursion over the nominal horizon at a constant rate,
/// evaluating the per-query information at each epoch's nominal state.
/// The returned states are the predictive bounds at the query times.
pub fn constant_rate_bound_trace(
    prior: &MotionPrior,
    sensor: &SensorModel,
    acc: &AccuracySpec,
    nominal: &Trajectory,
    rate: f64,
    opts: &SolverOptions,
) -> Result<Vec<InfoState>> {
    if !(rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "query rate must be positive, got {rate}"
        )));
    }
    let dt = 1.0 / rate;
    let mut state = pcrb::initialize(pcrb::InitMode::KnownState {
        accuracy: acc.ka(),
        dim: prior.dim(),
    })?;
    state.time = nominal.start_time();
    let mut trace = vec![state.clone()];
    let end = nominal.end_time();
    while state.time + dt <= end + 1e-9 && trace.len() <= opts.max_steps {
        let info = info_at(sensor, nominal, state.time, acc, opts)?;
        let blocks = pcrb::assemble_dblocks(prior, &info, dt)?;
        state = pcrb::recurse(&state, &blocks)?;
        trace.push(state.clone());
    }
    Ok(trace)
}

/// Greedy per-step schedule: each step solves for the smallest rate that
/// keeps the *next* predictive bound inside the accuracy envelope, then
/// advances the recursion at that rate.
pub fn solve_per_step_schedule(
    prior: &MotionPrior,
    sensor: &SensorModel,
    acc: &AccuracySpec,
    nominal: &Trajectory,
    init: InfoState,
    end_time: Option<f64>,
    opts: &SolverOptions,
) -> Result<ScheduleSolution> {
    check_anchor_count(sensor)?;
    let end = end_time.unwrap_or_else(|| nominal.end_time());
    let mut state = init;
    state.time = state.time.max(nominal.start_time());
    let mut rates = Vec::new();
    let mut trace = vec![state.clone()];
    let mut total_iterations = 0usize;

    while state.time < end - 1e-9 {
        if rates.len() >= opts.max_steps {
            return Ok(ScheduleSolution {
                rates: ScheduleRates::PerStep(rates),
                status: SolveStatus {
                    outcome: SolveOutcome::MaxIterations,
                    certificate: Some(format!(
                        "per-step schedule truncated at {} steps",
                        opts.max_steps
                    )),
                    iterations: total_iterations,
                    wall_time: 0.0,
                    kkt_residual: None,
                },
                info_trace: trace,
            });
        }
        let info = info_at(sensor, nominal, state.time, acc, opts)?;
        let lmi = conic::build_lmi(
            &state,
            prior,
            LmiParameterization::ScalarRate {
                sensor_info: info.clone(),
            },
            acc,
        )?;
        let (m_k, step_status) =
            conic::minimize_scalar(&lmi, opts.rate_bracket, opts.rate_rel_tol)?;
        total_iterations += step_status.iterations;
        if step_status.outcome != SolveOutcome::Optimal {
            let mut status = step_status;
            status.certificate = Some(format!(
                "infeasible at step {} (t = {:.6} s): {}",
                rates.len(),
                state.time,
                status.certificate.unwrap_or_default()
            ));
            status.iterations = total_iterations;
            return Ok(ScheduleSolution {
                rates: ScheduleRates::PerStep(rates),
                status,
                info_trace: trace,
            });
        }
        rates.push((state.time, m_k));
        let blocks = pcrb::assemble_dblocks(prior, &info, 1.0 / m_k)?;
        state = pcrb::recurse(&state, &blocks)?;
        trace.push(state.clone());
    }

    Ok(ScheduleSolution {
        rates: ScheduleRates::PerStep(rates),
        status: SolveStatus {
            outcome: SolveOutcome::Optimal,
            certificate: None,
            iterations: total_iterations,
            wall_time: 0.0,
            kkt_residual: None,
        },
        info_trace: trace,
    })
}

/// Solve mode for covariance identification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceMode {
    /// One precision for the whole horizon, information state pinned at
    /// `k_a^{-2} I`.
    Constant,
    /// A fresh trace-minimal solve at every query epoch, the recursion
    /// advanced with each solved precision.
    PerStep,
}

/// Loosest sensor precision(s) achieving the accuracy target at the given
/// constant query rate.
///
/// Position sensors solve for a full `d x d` precision matrix (or `x I`
/// under the isotropic restriction); range sensors solve for the scalar
/// precision `sigma_r^{-2}` shared across anchors.
pub fn solve_covariance(
    prior: &MotionPrior,
    sensor: &SensorModel,
    rate: f64,
    acc: &AccuracySpec,
    nominal: &Trajectory,
    mode: CovarianceMode,
    opts: &SolverOptions,
) -> Result<CovarianceSolution> {
    if !(rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "query rate must be positive, got {rate}"
        )));
    }
    check_anchor_count(sensor)?;
    let d = prior.dim();
    let dt = 1.0 / rate;

    // For range sensors the LMI coefficient is the expected information of
    // a unit-precision query.
    let unit_sensor = match sensor {
        SensorModel::Position(_) => None,
        SensorModel::Range(r) => Some(SensorModel::Range(r.with_variance(1.0)?)),
    };
    let map_at = |t: Option<f64>| -> Result<PrecisionMap> {
        match (&unit_sensor, t) {
            (None, _) => Ok(if opts.isotropic_position {
                PrecisionMap::IsotropicMatrix
            } else {
                PrecisionMap::FullMatrix
            }),
            (Some(unit), Some(t)) => {
                let x = nominal.position_at(t)?;
                let spread = opts.spread.matrix(acc, d);
                Ok(PrecisionMap::ScaledDirection(unit.expected_information(
                    &x,
                    &spread,
                    opts.quadrature_order,
                )?))
            }
            (Some(unit), None) => {
                // Constant mode: pessimistic isotropic scalarization.
                let w = worst_case_sensor_info(unit, nominal, acc, opts)?;
                Ok(PrecisionMap::ScaledDirection(w))
            }
        }
    };

    let augment_infeasible = |status: &mut SolveStatus| {
        if status.outcome == SolveOutcome::Infeasible {
            let ka_min = (linalg::max_eigenvalue(prior.psd()) * dt).sqrt();
            if let Some(cert) = &mut status.certificate {
                cert.push_str(&format!(
                    "; minimum achievable accuracy at {rate} Hz is k_a,min = {ka_min:.6} m"
                ));
            }
        }
    };

    match mode {
        CovarianceMode::Constant => {
            let stationary = pcrb::initialize(pcrb::InitMode::KnownState {
                accuracy: acc.ka(),
                dim: d,
            })?;
            let lmi = conic::build_lmi(
                &stationary,
                prior,
                LmiParameterization::Precision {
                    dt,
                    map: map_at(None)?,
                },
                acc,
            )?;
            let (x, mut status) = conic::minimize_trace_sdp(&lmi, &opts.sdp)?;
            augment_infeasible(&mut status);
            let implied = implied_cov(&x);
            Ok(CovarianceSolution {
                precisions: vec![(nominal.start_time(), x)],
                implied_covs: vec![implied],
                status,
            })
        }
        CovarianceMode::PerStep => {
            let mut state = pcrb::initialize(pcrb::InitMode::KnownState {
                accuracy: acc.ka(),
                dim: d,
            })?;
            state.time = nominal.start_time();
            let end = nominal.end_time();
            let mut precisions = Vec::new();
            let mut implied_covs = Vec::new();
            let mut total_iterations = 0usize;
            while state.time + dt <= end + 1e-9 && precisions.len() < opts.max_steps {
                let t = state.time;
                let map = map_at(Some(t))?;
                let lmi = conic::build_lmi(
                    &state,
                    prior,
                    LmiParameterization::Precision { dt, map },
                    acc,
                )?;
                let (x, mut step_status) = conic::minimize_trace_sdp(&lmi, &opts.sdp)?;
                total_iterations += step_status.iterations;
                if step_status.outcome == SolveOutcome::Infeasible {
                    augment_infeasible(&mut step_status);
                    step_status.certificate = Some(format!(
                        "infeasible at step {} (t = {t:.6} s): {}",
                        precisions.len(),
                        step_status.certificate.unwrap_or_default()
                    ));
                    step_status.iterations = total_iterations;
                    return Ok(CovarianceSolution {
                        precisions,
                        implied_covs,
                        status: step_status,
                    });
                }
                let info = match &unit_sensor {
                    None => x.clone(),
                    Some(unit) => {
                        let pos = nominal.position_at(t)?;
                        let spread = opts.spread.matrix(acc, d);
                        unit.expected_information(&pos, &spread, opts.quadrature_order)?
                            * x[(0, 0)]
                    }
                };
                let blocks = pcrb::assemble_dblocks(prior, &info, dt)?;
                state = pcrb::recurse(&state, &blocks)?;
                implied_covs.push(implied_cov(&x));
                precisions.push((t, x));
            }
            Ok(CovarianceSolution {
                precisions,
                implied_covs,
                status: SolveStatus {
                    outcome: SolveOutcome::Optimal,
                    certificate: None,
                    iterations: total_iterations,
                    wall_time: 0.0,
                    kkt_residual: None,
                },
            })
        }
    }
}

fn implied_cov(precision: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if linalg::min_eigenvalue(precision) > 1e-12 {
        linalg::spd_inverse(precision, "solved precision").ok()
    } else {
        None
    }
}

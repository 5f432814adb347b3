//! Batch MAP trajectory estimation.
//!
//! Discrete position states at the measurement times, WNOV prior factors
//! between consecutive states, position or range measurement factors, and
//! an optional initial-state prior. The weighted nonlinear least-squares
//! problem is minimized by Gauss-Newton with Levenberg-style damping; the
//! normal equations are block tridiagonal and solved by forward-backward
//! block elimination, so one iteration is linear in trajectory length.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::motion::{InputFn, MotionPrior, StateSample, Trajectory};
use crate::sensors::{range_jacobian, MeasurementRecord, MeasurementValue, SensorModel};

/// Duplicate-time tolerance when collapsing measurement epochs to states.
const TIME_EPS: f64 = 1e-9;

/// How the estimator is anchored at the start of the horizon.
pub enum MapInit {
    /// Gaussian prior factor `x(time) ~ N(mean, cov)`.
    Prior {
        time: f64,
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    },
    /// No prior; the measurements alone must make the problem well-posed.
    Free,
}

#[derive(Debug, Clone)]
enum MeasKind {
    Position { value: DVector<f64> },
    Range { value: f64, anchor: usize },
}

#[derive(Debug, Clone)]
struct MeasFactor {
    state: usize,
    kind: MeasKind,
}

/// Weighted nonlinear least-squares problem over discrete states.
pub struct FactorGraphProblem {
    dim: usize,
    times: Vec<f64>,
    /// Per-interval input values (piecewise constant), `times.len() - 1`.
    inputs: Vec<DVector<f64>>,
    /// Per-interval process weights `(Q dt)^{-1}`.
    process_weights: Vec<DMatrix<f64>>,
    meas_factors: Vec<MeasFactor>,
    position_weight: Option<DMatrix<f64>>,
    range_weight: Option<f64>,
    anchors: Vec<DVector<f64>>,
    /// `(state index, mean, weight)` of the initial-state prior.
    init_prior: Option<(usize, DVector<f64>, DMatrix<f64>)>,
    initial_guess: Vec<DVector<f64>>,
}

impl FactorGraphProblem {
    pub fn num_states(&self) -> usize {
        self.times.len()
    }

    pub fn num_measurement_factors(&self) -> usize {
        self.meas_factors.len()
    }

    pub fn num_prior_factors(&self) -> usize {
        self.process_weights.len()
    }

    pub fn state_times(&self) -> &[f64] {
        &self.times
    }
}

/// Builds the factor graph for a batch of measurements.
///
/// States are instantiated at the distinct measurement times, plus the
/// initial-prior time, the `horizon` endpoints, and any `extra_state_times`
/// (e.g. commanded-velocity switch points, so the piecewise-constant input
/// is exact over every prior-factor interval). Initial guesses come from
/// the measurements themselves: position values directly, range epochs by
/// anchor-differencing trilateration where at least `d+1` anchors were
/// ranged, linear interpolation elsewhere.
pub fn build_problem(
    prior: &MotionPrior,
    sensor: &SensorModel,
    measurements: &[MeasurementRecord],
    input: InputFn,
    init: MapInit,
    horizon: Option<(f64, f64)>,
    extra_state_times: &[f64],
) -> Result<FactorGraphProblem> {
    let dim = prior.dim();
    for w in measurements.windows(2) {
        if w[1].time < w[0].time - TIME_EPS {
            return Err(Error::InvalidArgument(
                "measurements must be sorted by time".into(),
            ));
        }
    }
    if measurements.is_empty() && matches!(init, MapInit::Free) {
        return Err(Error::UnderConstrained(
            "no measurements and no initial-state prior".into(),
        ));
    }

    // Distinct state times.
    let mut times: Vec<f64> = Vec::new();
    let push_time = |t: f64, times: &mut Vec<f64>| {
        if !times.iter().any(|&u| (u - t).abs() < TIME_EPS) {
            times.push(t);
        }
    };
    for m in measurements {
        push_time(m.time, &mut times);
    }
    if let MapInit::Prior { time, .. } = &init {
        push_time(*time, &mut times);
    }
    if let Some((t0, t1)) = horizon {
        if t1 < t0 {
            return Err(Error::InvalidArgument(format!(
                "horizon end {t1} before start {t0}"
            )));
        }
        push_time(t0, &mut times);
        push_time(t1, &mut times);
    }
    if let Some((t0, t1)) = horizon {
        for &t in extra_state_times {
            if t >= t0 && t <= t1 {
                push_time(t, &mut times);
            }
        }
    } else if let (Some(first), Some(last)) = (times.first().copied(), times.last().copied()) {
        for &t in extra_state_times {
            if t >= first && t <= last {
                push_time(t, &mut times);
            }
        }
    }
    times.sort_by(f64::total_cmp);
    if times.len() < 2 {
        // A single state still forms a valid (degenerate) problem when a
        // prior or measurement pins it; pad nothing and handle below.
        if times.is_empty() {
            return Err(Error::UnderConstrained("no states to estimate".into()));
        }
    }

    let state_of = |t: f64| -> usize {
        times
            .iter()
            .position(|&u| (u - t).abs() < TIME_EPS)
            .expect("state time registered")
    };

    // Measurement factors and per-kind weights.
    let (position_weight, range_weight) = match sensor {
        SensorModel::Position(p) => (Some(p.precision().clone()), None),
        SensorModel::Range(r) => (None, Some(1.0 / r.variance())),
    };
    let anchors = match sensor {
        SensorModel::Range(r) => r.anchors().to_vec(),
        SensorModel::Position(_) => Vec::new(),
    };
    let mut meas_factors = Vec::with_capacity(measurements.len());
    for m in measurements {
        let state = state_of(m.time);
        match (&m.value, sensor) {
            (MeasurementValue::Position(v), SensorModel::Position(_)) => {
                if v.len() != dim {
                    return Err(Error::InvalidArgument(
                        "position measurement dimension mismatch".into(),
                    ));
                }
                meas_factors.push(MeasFactor {
                    state,
                    kind: MeasKind::Position { value: v.clone() },
                });
            }
            (MeasurementValue::Range(r), SensorModel::Range(s)) => {
                let anchor = m.anchor_index.ok_or_else(|| {
                    Error::InvalidArgument("range record without anchor index".into())
                })?;
                if anchor >= s.anchors().len() {
                    return Err(Error::InvalidArgument(format!(
                        "anchor index {anchor} out of range"
                    )));
                }
                meas_factors.push(MeasFactor {
                    state,
                    kind: MeasKind::Range { value: *r, anchor },
                });
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "measurement kind does not match the sensor model".into(),
                ));
            }
        }
    }

    // Process factors between consecutive states.
    let mut inputs = Vec::with_capacity(times.len().saturating_sub(1));
    let mut process_weights = Vec::with_capacity(times.len().saturating_sub(1));
    for w in times.windows(2) {
        let dt = w[1] - w[0];
        inputs.push(input(w[0]));
        process_weights.push(prior.process_information(dt)?);
    }

    let init_prior = match init {
        MapInit::Free => None,
        MapInit::Prior { time, mean, cov } => {
            if mean.len() != dim {
                return Err(Error::InvalidArgument(
                    "initial prior mean dimension mismatch".into(),
                ));
            }
            let weight = linalg::spd_inverse(&cov, "initial prior covariance")?;
            Some((state_of(time), mean, weight))
        }
    };

    let initial_guess = initial_guesses(
        dim,
        &times,
        &meas_factors,
        &anchors,
        init_prior.as_ref().map(|(i, m, _)| (*i, m.clone())),
    );

    Ok(FactorGraphProblem {
        dim,
        times,
        inputs,
        process_weights,
        meas_factors,
        position_weight,
        range_weight,
        anchors,
        init_prior,
        initial_guess,
    })
}

/// Linear least-squares trilateration by anchor differencing. Returns
/// `None` for degenerate geometry.
fn trilaterate(anchors: &[&DVector<f64>], ranges: &[f64], dim: usize) -> Option<DVector<f64>> {
    if anchors.len() < dim + 1 {
        return None;
    }
    let p0 = anchors[0];
    let r0 = ranges[0];
    let n = anchors.len() - 1;
    let mut a = DMatrix::zeros(n, dim);
    let mut b = DVector::zeros(n);
    for i in 1..anchors.len() {
        let pi = anchors[i];
        for k in 0..dim {
            a[(i - 1, k)] = 2.0 * (pi[k] - p0[k]);
        }
        b[i - 1] = pi.norm_squared() - p0.norm_squared() + r0 * r0 - ranges[i] * ranges[i];
    }
    let ata = a.transpose() * &a;
    let atb = a.transpose() * b;
    ata.cholesky().map(|ch| ch.solve(&atb))
}

fn initial_guesses(
    dim: usize,
    times: &[f64],
    factors: &[MeasFactor],
    anchors: &[DVector<f64>],
    init_prior: Option<(usize, DVector<f64>)>,
) -> Vec<DVector<f64>> {
    let n = times.len();
    let mut guess: Vec<Option<DVector<f64>>> = vec![None; n];

    // Position fixes first.
    for f in factors {
        if let MeasKind::Position { value } = &f.kind {
            guess[f.state] = Some(value.clone());
        }
    }
    // Trilateration at epochs with enough range records.
    let mut per_state: Vec<(Vec<&DVector<f64>>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); n];
    for f in factors {
        if let MeasKind::Range { value, anchor } = &f.kind {
            per_state[f.state].0.push(&anchors[*anchor]);
            per_state[f.state].1.push(*value);
        }
    }
    for (i, (a, r)) in per_state.iter().enumerate() {
        if guess[i].is_none() && !a.is_empty() {
            guess[i] = trilaterate(a, r, dim);
        }
    }
    if let Some((idx, mean)) = init_prior {
        guess[idx] = Some(mean);
    }

    // Fill gaps by linear interpolation between resolved states, extending
    // the nearest fix at the ends; all-unresolved problems start at zero.
    let resolved: Vec<usize> = (0..n).filter(|&i| guess[i].is_some()).collect();
    if resolved.is_empty() {
        return vec![DVector::zeros(dim); n];
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if let Some(g) = &guess[i] {
            out.push(g.clone());
            continue;
        }
        let next = resolved.iter().find(|&&r| r > i);
        let prev = resolved.iter().rev().find(|&&r| r < i);
        let v = match (prev, next) {
            (Some(&p), Some(&q)) => {
                let alpha = (times[i] - times[p]) / (times[q] - times[p]);
                let gp = guess[p].as_ref().unwrap();
                let gq = guess[q].as_ref().unwrap();
                gp + (gq - gp) * alpha
            }
            (Some(&p), None) => guess[p].clone().unwrap(),
            (None, Some(&q)) => guess[q].clone().unwrap(),
            (None, None) => unreachable!("resolved is nonempty"),
        };
        out.push(v);
    }
    out
}

/// Gauss-Newton / damping configuration.
#[derive(Debug, Clone, Copy)]
pub struct GaussNewtonOptions {
    pub max_iter: usize,
    /// Gradient tolerance, applied relative to the cost scale:
    /// convergence requires `||grad|| < grad_tol * (1 + cost)` (an absolute
    /// threshold is unreachable in f64 once the weighted cost is large).
    pub grad_tol: f64,
    /// Floor below which steps count as stagnation, relative to the state
    /// norm; a stagnated iteration stops early with the gradient verdict.
    pub step_tol: f64,
    pub damping_initial: f64,
    pub damping_factor: f64,
    pub damping_retries: usize,
}

impl Default for GaussNewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            damping_initial: 1e-4,
            damping_factor: 10.0,
            damping_retries: 10,
        }
    }
}

/// Outcome of a batch solve.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub estimate: Trajectory,
    pub iterations: usize,
    pub final_cost: f64,
    /// True iff the gradient norm fell below `grad_tol`.
    pub converged: bool,
    pub grad_norm: f64,
}

struct Residuals {
    cost: f64,
    /// Block gradient of the cost (length n, each d).
    grad: Vec<DVector<f64>>,
    /// Gauss-Newton diagonal blocks.
    diag: Vec<DMatrix<f64>>,
    /// Upper off-diagonal blocks coupling `i` and `i + 1`.
    off: Vec<DMatrix<f64>>,
}

fn linearize(problem: &FactorGraphProblem, states: &[DVector<f64>]) -> Result<Residuals> {
    let d = problem.dim;
    let n = states.len();
    let mut cost = 0.0;
    let mut grad = vec![DVector::zeros(d); n];
    let mut diag = vec![DMatrix::zeros(d, d); n];
    let mut off = vec![DMatrix::zeros(d, d); n.saturating_sub(1)];

    // Process factors: r = x_{i+1} - x_i - u_i dt_i, weight (Q dt)^{-1}.
    for i in 0..n.saturating_sub(1) {
        let dt = problem.times[i + 1] - problem.times[i];
        let w = &problem.process_weights[i];
        let r = &states[i + 1] - &states[i] - &problem.inputs[i] * dt;
        let wr = w * &r;
        cost += 0.5 * r.dot(&wr);
        grad[i] -= &wr;
        grad[i + 1] += &wr;
        diag[i] += w;
        diag[i + 1] += w;
        off[i] -= w;
    }

    // Measurement factors.
    for f in &problem.meas_factors {
        match &f.kind {
            MeasKind::Position { value } => {
                let w = problem
                    .position_weight
                    .as_ref()
                    .expect("position weight present for position factors");
                // r = z - x, J = -I.
                let r = value - &states[f.state];
                let wr = w * &r;
                cost += 0.5 * r.dot(&wr);
                grad[f.state] -= &wr;
                diag[f.state] += w;
            }
            MeasKind::Range { value, anchor } => {
                let w = problem
                    .range_weight
                    .expect("range weight present for range factors");
                let jac = range_jacobian(&problem.anchors[*anchor], &states[f.state])?;
                let dist = (&problem.anchors[*anchor] - &states[f.state]).norm();
                // r = z - h(x), dh/dx = jac, J = -jac.
                let r = value - dist;
                cost += 0.5 * w * r * r;
                let jt = jac.transpose();
                grad[f.state] -= &jt * (w * r);
                diag[f.state] += &jt * jac * w;
            }
        }
    }

    // Initial-state prior: r = x - mean.
    if let Some((idx, mean, w)) = &problem.init_prior {
        let r = &states[*idx] - mean;
        let wr = w * &r;
        cost += 0.5 * r.dot(&wr);
        grad[*idx] += &wr;
        diag[*idx] += w;
    }

    Ok(Residuals {
        cost,
        grad,
        diag,
        off,
    })
}

fn state_norm(states: &[DVector<f64>]) -> f64 {
    states.iter().map(|s| s.norm_squared()).sum::<f64>().sqrt()
}

fn cost_only(problem: &FactorGraphProblem, states: &[DVector<f64>]) -> Result<f64> {
    let mut cost = 0.0;
    for i in 0..states.len().saturating_sub(1) {
        let dt = problem.times[i + 1] - problem.times[i];
        let r = &states[i + 1] - &states[i] - &problem.inputs[i] * dt;
        cost += 0.5 * r.dot(&(&problem.process_weights[i] * &r));
    }
    for f in &problem.meas_factors {
        match &f.kind {
            MeasKind::Position { value } => {
                let w = problem.position_weight.as_ref().unwrap();
                let r = value - &states[f.state];
                cost += 0.5 * r.dot(&(w * &r));
            }
            MeasKind::Range { value, anchor } => {
                let w = problem.range_weight.unwrap();
                let dist = (&problem.anchors[*anchor] - &states[f.state]).norm();
                if dist <= crate::sensors::EPS_DIST {
                    return Err(Error::SingularGeometry {
                        index: *anchor,
                        eps: crate::sensors::EPS_DIST,
                    });
                }
                let r = value - dist;
                cost += 0.5 * w * r * r;
            }
        }
    }
    if let Some((idx, mean, w)) = &problem.init_prior {
        let r = &states[*idx] - mean;
        cost += 0.5 * r.dot(&(w * &r));
    }
    Ok(cost)
}

/// Solves the block-tridiagonal system `H delta = rhs` by forward block
/// elimination and back substitution (block Thomas algorithm). `diag` are
/// the diagonal blocks, `off[i]` couples states `i` and `i + 1` (upper
/// triangle); the lower triangle is its transpose.
fn solve_block_tridiagonal(
    diag: &[DMatrix<f64>],
    off: &[DMatrix<f64>],
    rhs: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let n = diag.len();
    // Cholesky factors of the Schur-reduced diagonal blocks
    // S_0 = D_0, S_i = D_i - U_{i-1}^T S_{i-1}^{-1} U_{i-1}.
    let mut chols: Vec<nalgebra::Cholesky<f64, nalgebra::Dyn>> = Vec::with_capacity(n);
    let mut z: Vec<DVector<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut s_i = diag[i].clone();
        let mut z_i = rhs[i].clone();
        if i > 0 {
            let u_prev = &off[i - 1];
            s_i -= u_prev.transpose() * chols[i - 1].solve(u_prev);
            z_i -= u_prev.transpose() * chols[i - 1].solve(&z[i - 1]);
        }
        let ch = linalg::symmetrize(&s_i).cholesky().ok_or_else(|| {
            Error::NumericalSingularity(format!(
                "normal-equation block {i} not positive definite (under-constrained problem?)"
            ))
        })?;
        chols.push(ch);
        z.push(z_i);
    }

    // delta_{n-1} = S_{n-1}^{-1} z_{n-1};
    // delta_i = S_i^{-1} (z_i - U_i delta_{i+1}).
    let mut delta = vec![DVector::zeros(rhs[0].len()); n];
    delta[n - 1] = chols[n - 1].solve(&z[n - 1]);
    for i in (0..n.saturating_sub(1)).rev() {
        let v = &z[i] - &off[i] * &delta[i + 1];
        delta[i] = chols[i].solve(&v);
    }
    Ok(delta)
}

/// Minimizes the weighted least-squares cost by damped Gauss-Newton.
pub fn solve_gauss_newton(
    problem: &FactorGraphProblem,
    opts: &GaussNewtonOptions,
) -> Result<EstimationResult> {
    let mut states = problem.initial_guess.clone();
    let mut cost = cost_only(problem, &states)?;
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    let mut small_step = false;
    let mut prev_small_step = false;

    while iterations < opts.max_iter {
        iterations += 1;
        let lin = linearize(problem, &states)?;
        grad_norm = lin
            .grad
            .iter()
            .map(|g| g.norm_squared())
            .sum::<f64>()
            .sqrt();
        if grad_norm < opts.grad_tol * (1.0 + lin.cost) {
            converged = true;
            cost = lin.cost;
            break;
        }
        let rhs: Vec<DVector<f64>> = lin.grad.iter().map(|g| -g).collect();

        // Plain Gauss-Newton first; multiplicative diagonal damping only
        // when the step fails to decrease the cost.
        let mut lambda = 0.0;
        let mut accepted = false;
        for retry in 0..=opts.damping_retries {
            let diag: Vec<DMatrix<f64>> = if lambda == 0.0 {
                lin.diag.clone()
            } else {
                lin.diag
                    .iter()
                    .map(|d| {
                        let mut m = d.clone();
                        for k in 0..m.nrows() {
                            m[(k, k)] *= 1.0 + lambda;
                        }
                        m
                    })
                    .collect()
            };
            let delta = solve_block_tridiagonal(&diag, &lin.off, &rhs)?;
            let trial: Vec<DVector<f64>> = states
                .iter()
                .zip(&delta)
                .map(|(x, dx)| x + dx)
                .collect();
            match cost_only(problem, &trial) {
                // Near the optimum the true decrement drops below the
                // floating-point resolution of the cost itself; accept
                // anything within that relative noise band so the gradient
                // can settle to its floor instead of stalling above it.
                Ok(trial_cost) if trial_cost <= lin.cost + 1e-12 * (1.0 + lin.cost) => {
                    let step_norm = delta
                        .iter()
                        .map(|d| d.norm_squared())
                        .sum::<f64>()
                        .sqrt();
                    states = trial;
                    cost = trial_cost;
                    accepted = true;
                    small_step = step_norm < opts.step_tol * (1.0 + state_norm(&states));
                    break;
                }
                _ => {
                    lambda = if retry == 0 {
                        opts.damping_initial
                    } else {
                        lambda * opts.damping_factor
                    };
                }
            }
        }
        if !accepted || (small_step && prev_small_step) {
            // Damping exhausted without descent, or two consecutive steps
            // at the resolution floor: stop and let the final gradient
            // check below decide the verdict.
            break;
        }
        prev_small_step = small_step;
    }

    if !converged {
        // One final gradient check (the loop may have exited on max_iter
        // right after a successful step).
        let lin = linearize(problem, &states)?;
        grad_norm = lin
            .grad
            .iter()
            .map(|g| g.norm_squared())
            .sum::<f64>()
            .sqrt();
        cost = lin.cost;
        converged = grad_norm < opts.grad_tol * (1.0 + cost);
    }

    let samples: Vec<StateSample> = problem
        .times
        .iter()
        .enumerate()
        .map(|(i, &t)| StateSample {
            time: t,
            position: states[i].clone(),
            velocity_input: if i < problem.inputs.len() {
                problem.inputs[i].clone()
            } else if let Some(last) = problem.inputs.last() {
                last.clone()
            } else {
                DVector::zeros(problem.dim)
            },
        })
        .collect();
    let estimate = if samples.len() >= 2 {
        Trajectory::new(samples, 0)?
    } else {
        // Degenerate single-state problem: duplicate-free trajectory not
        // representable; extend by an epsilon-free duplicate is invalid, so
        // reject instead.
        return Err(Error::UnderConstrained(
            "estimate has fewer than 2 states".into(),
        ));
    };
    Ok(EstimationResult {
        estimate,
        iterations,
        final_cost: cost,
        converged,
        grad_norm,
    })
}

/// Root-mean-square position error between an estimate and ground truth,
/// evaluated at the estimate's sample times (truth linearly interpolated).
pub fn rmse(estimate: &Trajectory, truth: &Trajectory) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in estimate.samples() {
        let gt = truth.position_at(s.time).map_err(|_| {
            Error::InvalidArgument(format!(
                "estimate time {} outside ground-truth span [{}, {}]",
                s.time,
                truth.start_time(),
                truth.end_time()
            ))
        })?;
        total += (&s.position - gt).norm_squared();
        count += 1;
    }
    Ok((total / count as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{GaussianStream, NoiseMode};
    use crate::sensors::{PositionSensor, RangeSensor};

    fn vec2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    fn position_sensor(var: f64) -> SensorModel {
        SensorModel::Position(PositionSensor::isotropic(2, var).unwrap())
    }

    fn square_anchors(half: f64) -> Vec<DVector<f64>> {
        vec![
            vec2(half, half),
            vec2(-half, half),
            vec2(-half, -half),
            vec2(half, -half),
            vec2(half, 0.0),
            vec2(0.0, half),
            vec2(-half, 0.0),
            vec2(0.0, -half),
        ]
    }

    #[test]
    fn factor_counting() {
        let prior = MotionPrior::isotropic(2, 0.001).unwrap();
        let sensor = position_sensor(0.01);
        let measurements: Vec<MeasurementRecord> = (1..=3)
            .map(|k| MeasurementRecord {
                time: k as f64,
                value: MeasurementValue::Position(vec2(k as f64, 0.0)),
                anchor_index: None,
            })
            .collect();
        let problem = build_problem(
            &prior,
            &sensor,
            &measurements,
            &|_| DVector::zeros(2),
            MapInit::Free,
            None,
            &[],
        )
        .unwrap();
        assert_eq!(problem.num_measurement_factors(), 3);
        assert_eq!(problem.num_prior_factors(), 2);
        assert_eq!(problem.num_states(), 3);
    }

    #[test]
    fn range_epoch_with_eight_anchors_is_eight_factors_one_state() {
        let prior = MotionPrior::isotropic(2, 0.001).unwrap();
        let anchors = square_anchors(5.0);
        let sensor = SensorModel::Range(RangeSensor::new(0.01, anchors).unwrap());
        let truth = vec2(1.0, 2.0);
        let mut stream = GaussianStream::new(4);
        let mut records = sensor
            .simulate_measurement(&truth, 1.0, &mut stream, NoiseMode::Zero)
            .unwrap();
        // A second epoch so the trajectory has two states.
        records.extend(
            sensor
                .simulate_measurement(&truth, 2.0, &mut stream, NoiseMode::Zero)
                .unwrap(),
        );
        let problem = build_problem(
            &prior,
            &sensor,
            &records,
            &|_| DVector::zeros(2),
            MapInit::Free,
            None,
            &[],
        )
        .unwrap();
        assert_eq!(problem.num_measurement_factors(), 16);
        assert_eq!(problem.num_states(), 2);
        assert_eq!(problem.num_prior_factors(), 1);
    }

    #[test]
    fn zero_input_default_makes_pure_smoothness_prior() {
        let prior = MotionPrior::isotropic(2, 0.001).unwrap();
        let sensor = position_sensor(0.01);
        let measurements: Vec<MeasurementRecord> = (0..2)
            .map(|k| MeasurementRecord {
                time: k as f64,
                value: MeasurementValue::Position(vec2(0.0, 0.0)),
                anchor_index: None,
            })
            .collect();
        let problem = build_problem(
            &prior,
            &sensor,
            &measurements,
            &|_| DVector::zeros(2),
            MapInit::Free,
            None,
            &[],
        )
        .unwrap();
        assert!(problem.inputs.iter().all(|u| u.norm() == 0.0));
    }

    #[test]
    fn empty_measurements_without_prior_is_underconstrained() {
        let prior = MotionPrior::isotropic(2, 0.001).unwrap();
        let sensor = position_sensor(0.01);
        let err = build_problem(
            &prior,
            &sensor,
            &[],
            &|_| DVector::zeros(2),
            MapInit::Free,
            None,
            &[],
        );
        assert!(matches!(err, Err(Error::UnderConstrained(_))));
    }

    #[test]
    fn linear_problem_converges_in_one_iteration() {
        let prior = MotionPrior::isotropic(2, 0.001).unwrap();
        let sensor = position_sensor(0.0064);
        let mut stream = GaussianStream::new(11);
        let measurements: Vec<MeasurementRecord> = (0..20)
            .map(|k| MeasurementRecord {
                time: 0.5 * k as f64,
                value: MeasurementValue::Position(
                    vec2(0.1 * k as f64, -0.05 * k as f64)
                        + stream.next_standard_vector(2) * 0.08,
                ),
                anchor_index: None,
            })
            .collect();
        let problem = build_problem(
            &prior,
            &sensor,
            &measurements,
            &|_| vec2(0.2, -0.1),
            MapInit::Free,
            None,
            &[],
        )
        .unwrap();
        let result = solve_gauss_newton(&problem, &GaussNewtonOptions::default()).unwrap();
        assert!(result.converged);
        assert_eq!(result.iterations, 2, "linear: one step then gradient check");
        assert!(result.grad_norm < 1e-10, "grad {}", result.grad_norm);
    }

    #[test]
    fn zero_noise_measurements_recover_truth_exactly() {
        let prior = MotionPrior::isotropic(2, 0.001).unwrap();
        let u = vec2(0.3, -0.2);
        let grid: Vec<f64> = (0..=40).map(|i| 0.25 * i as f64).collect();
        let truth = prior
            .sample_trajectory(&vec2(1.0, 2.0), &|_| u.clone(), &grid, 21, NoiseMode::Zero)
            .unwrap();

        let sensor = position_sensor(0.0064);
        let mut stream = GaussianStream::new(0);
        let mut records = Vec::new();
        for s in truth.samples() {
            records.extend(
                sensor
                    .simulate_measurement(&s.position, s.time, &mut stream, NoiseMode::Zero)
                    .unwrap(),
            );
        }
        let problem = build_problem(
            &prior,
            &sensor,
            &records,
            &|_| u.clone(),
            MapInit::Free,
            None,
            &[],
        )
        .unwrap();
        let result = solve_gauss_newton(&problem, &GaussNewtonOptions::default()).unwrap();
        assert!(result.converged);
        let err = rmse(&result.estimate, &truth).unwrap();
        assert!(err < 1e-8, "rmse {err}");
    }

    #[test]
    fn zero_noise_range_recovery() {
        let prior = MotionPrior::isotropic(2, 0.001).unwrap();
        let anchors = square_anchors(8.0);
        let sensor = SensorModel::Range(RangeSensor::new(0.0064, anchors).unwrap());
        let u = vec2(0.2, 0.1);
        let grid: Vec<f64> = (0..=30).map(|i| 0.2 * i as f64).collect();
        let truth = prior
            .sample_trajectory(&vec2(0.5, -1.0), &|_| u.clone(), &grid, 33, NoiseMode::Zero)
            .unwrap();
        let mut stream = GaussianStream::new(0);
        let mut records = Vec::new();
        for s in truth.samples() {
            records.extend(
                sensor
                    .simulate_measurement(&s.position, s.time, &mut stream, NoiseMode::Zero)
                    .unwrap(),
            );
        }
        let problem = build_problem(
            &prior,
            &sensor,
            &records,
            &|_| u.clone(),
            MapInit::Free,
            None,
            &[],
        )
        .unwrap();
        let result = solve_gauss_newton(&problem, &GaussNewtonOptions::default()).unwrap();
        assert!(result.converged);
        let err = rmse(&result.estimate, &truth).unwrap();
        assert!(err < 1e-8, "rmse {err}");
    }

    #[test]
    fn range_solution_robust_to_perturbed_initialization() {
        // The same noisy range problem solved from the built-in guess and
        // from a perturbed guess must land on the same minimizer.
        let prior = MotionPrior::isotropic(2, 0.001).unwrap();
        let anchors = square_anchors(8.0);
        let sensor = SensorModel::Range(RangeSensor::new(0.0064, anchors).unwrap());
        let u = vec2(-0.1, 0.25);
        let grid: Vec<f64> = (0..=25).map(|i| 0.2 * i as f64).collect();
        let truth = prior
            .sample_trajectory(&vec2(2.0, 1.0), &|_| u.clone(), &grid, 55, NoiseMode::Sampled)
            .unwrap();
        let mut stream = GaussianStream::new(7);
        let mut records = Vec::new();
        for s in truth.samples() {
            records.extend(
                sensor
                    .simulate_measurement(&s.position, s.time, &mut stream, NoiseMode::Sampled)
                    .unwrap(),
            );
        }
        let problem = build_problem(
            &prior,
            &sensor,
            &records,
            &|_| u.clone(),
            MapInit::Free,
            None,
            &[],
        )
        .unwrap();
        let baseline = solve_gauss_newton(&problem, &GaussNewtonOptions::default()).unwrap();
        assert!(baseline.converged);

        let mut perturbed = problem;
        let mut pstream = GaussianStream::new(8);
        for g in &mut perturbed.initial_guess {
            *g += pstream.next_standard_vector(2) * 0.5;
        }
        let alt = solve_gauss_newton(&perturbed, &GaussNewtonOptions::default()).unwrap();
        assert!(alt.converged);
        for (a, b) in baseline
            .estimate
            .samples()
            .iter()
            .zip(alt.estimate.samples())
        {
            assert!((&a.position - &b.position).norm() < 1e-6);
        }
    }

    #[test]
    fn block_solver_matches_dense_solve() {
        // Small position problem: the block-tridiagonal path must equal an
        // independently assembled dense normal-equation solve.
        let prior = MotionPrior::isotropic(2, 0.002).unwrap();
        let sensor = position_sensor(0.01);
        let mut stream = GaussianStream::new(17);
        let measurements: Vec<MeasurementRecord> = (0..6)
            .map(|k| MeasurementRecord {
                time: 0.4 * k as f64,
                value: MeasurementValue::Position(stream.next_standard_vector(2)),
                anchor_index: None,
            })
            .collect();
        let problem = build_problem(
            &prior,
            &sensor,
            &measurements,
            &|_| DVector::zeros(2),
            MapInit::Free,
            None,
            &[],
        )
        .unwrap();
        let lin = linearize(&problem, &problem.initial_guess).unwrap();
        let rhs: Vec<DVector<f64>> = lin.grad.iter().map(|g| -g).collect();
        let block = solve_block_tridiagonal(&lin.diag, &lin.off, &rhs).unwrap();

        let n = problem.num_states();
        let d = 2;
        let mut dense = DMatrix::zeros(n * d, n * d);
        let mut dense_rhs = DVector::zeros(n * d);
        for i in 0..n {
            dense
                .view_mut((i * d, i * d), (d, d))
                .copy_from(&lin.diag[i]);
            dense_rhs.rows_mut(i * d, d).copy_from(&rhs[i]);
            if i + 1 < n {
                dense.view_mut((i * d, (i + 1) * d), (d, d)).copy_from(&lin.off[i]);
                dense
                    .view_mut(((i + 1) * d, i * d), (d, d))
                    .copy_from(&lin.off[i].transpose());
            }
        }
        let dense_sol = dense.cholesky().unwrap().solve(&dense_rhs);
        for i in 0..n {
            let blk = &block[i];
            let dns = dense_sol.rows(i * d, d);
            assert!(
                (blk - DVector::from_column_slice(dns.as_slice())).norm() < 1e-8,
                "block {i} differs"
            );
        }
    }

    #[test]
    fn rmse_cases() {
        let prior = MotionPrior::isotropic(2, 0.001).unwrap();
        let grid = [0.0, 1.0, 2.0];
        let truth = prior
            .sample_trajectory(
                &vec2(0.0, 0.0),
                &|_| DVector::zeros(2),
                &grid,
                1,
                NoiseMode::Zero,
            )
            .unwrap();
        assert_eq!(rmse(&truth, &truth).unwrap(), 0.0);

        // Constant (0.03, 0.04) offset: rmse = 0.05.
        let offset: Vec<StateSample> = truth
            .samples()
            .iter()
            .map(|s| StateSample {
                time: s.time,
                position: &s.position + vec2(0.03, 0.04),
                velocity_input: s.velocity_input.clone(),
            })
            .collect();
        let shifted = Trajectory::new(offset, 0).unwrap();
        assert!((rmse(&shifted, &truth).unwrap() - 0.05).abs() < 1e-12);

        // Disjoint supports must error.
        let far: Vec<StateSample> = truth
            .samples()
            .iter()
            .map(|s| StateSample {
                time: s.time + 100.0,
                position: s.position.clone(),
                velocity_input: s.velocity_input.clone(),
            })
            .collect();
        let far = Trajectory::new(far, 0).unwrap();
        assert!(rmse(&far, &truth).is_err());
    }

    #[test]
    fn cost_never_increases_over_accepted_iterations() {
        let prior = MotionPrior::isotropic(2, 0.001).unwrap();
        let anchors = square_anchors(6.0);
        let sensor = SensorModel::Range(RangeSensor::new(0.01, anchors).unwrap());
        let grid: Vec<f64> = (0..=15).map(|i| 0.3 * i as f64).collect();
        let truth = prior
            .sample_trajectory(
                &vec2(1.0, 1.0),
                &|_| vec2(0.1, 0.0),
                &grid,
                91,
                NoiseMode::Sampled,
            )
            .unwrap();
        let mut stream = GaussianStream::new(91);
        let mut records = Vec::new();
        for s in truth.samples() {
            records.extend(
                sensor
                    .simulate_measurement(&s.position, s.time, &mut stream, NoiseMode::Sampled)
                    .unwrap(),
            );
        }
        let problem = build_problem(
            &prior,
            &sensor,
            &records,
            &|_| vec2(0.1, 0.0),
            MapInit::Free,
            None,
            &[],
        )
        .unwrap();
        // Solve once per max_iter setting; cost must be non-increasing.
        let mut last = f64::INFINITY;
        for max_iter in 1..=6 {
            let opts = GaussNewtonOptions {
                max_iter,
                ..Default::default()
            };
            let result = solve_gauss_newton(&problem, &opts).unwrap();
            assert!(
                result.final_cost <= last + 1e-10 * (1.0 + last.min(1e12)),
                "cost increased at iteration {max_iter}"
            );
            last = result.final_cost;
        }
    }

    #[test]
    fn init_prior_anchors_otherwise_unobserved_state() {
        let prior = MotionPrior::isotropic(2, 0.001).unwrap();
        let sensor = position_sensor(0.0064);
        let measurements = vec![MeasurementRecord {
            time: 1.0,
            value: MeasurementValue::Position(vec2(1.0, 0.0)),
            anchor_index: None,
        }];
        let problem = build_problem(
            &prior,
            &sensor,
            &measurements,
            &|_| DVector::zeros(2),
            MapInit::Prior {
                time: 0.0,
                mean: vec2(0.0, 0.0),
                cov: DMatrix::identity(2, 2) * 1e-6,
            },
            Some((0.0, 2.0)),
            &[],
        )
        .unwrap();
        assert_eq!(problem.num_states(), 3);
        let result = solve_gauss_newton(&problem, &GaussNewtonOptions::default()).unwrap();
        assert!(result.converged);
        // The prior pins t=0 near the origin.
        assert!(result.estimate.samples()[0].position.norm() < 1e-3);
    }
}

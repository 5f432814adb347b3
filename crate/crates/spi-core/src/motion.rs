//! White-noise-on-velocity (WNOV) continuous-time motion prior.
//!
//! The state is the robot position `x(t)` driven by a known velocity input
//! `u(t)` plus white noise of power spectral density `Q`:
//! `xdot = u + w`, `w ~ GP(0, Q delta(t - t'))`. Between two times the mean
//! propagates as `x_{k+1} = x_k + u_k dt`, the process Jacobian is the
//! identity, and the discrete process covariance is `Q dt`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{GaussianStream, NoiseMode};

/// Velocity input evaluated at a time; treated as piecewise-constant over
/// each grid interval (the value at the interval start applies throughout).
pub type InputFn<'a> = &'a dyn Fn(f64) -> DVector<f64>;

/// WNOV prior: state dimension and power spectral density matrix.
#[derive(Debug, Clone)]
pub struct MotionPrior {
    dim: usize,
    psd: DMatrix<f64>,
    psd_inv: DMatrix<f64>,
    psd_sqrt: DMatrix<f64>,
}

impl MotionPrior {
    /// Builds a prior from a symmetric positive definite `Q`.
    ///
    /// Singular `Q` is rejected because `Q^{-1}` appears in the bound
    /// recursion; the noiseless limit for testing is reached through
    /// [`NoiseMode::Zero`] instead.
    pub fn new(psd: DMatrix<f64>) -> Result<Self> {
        let dim = psd.nrows();
        if dim == 0 {
            return Err(Error::InvalidArgument("state dimension must be >= 1".into()));
        }
        let psd = linalg::check_spd(&psd, 1e-12, "process power spectral density")?;
        let psd_inv = linalg::spd_inverse(&psd, "process power spectral density")?;
        let psd_sqrt = linalg::psd_sqrt(&psd, "process power spectral density")?;
        Ok(Self {
            dim,
            psd,
            psd_inv,
            psd_sqrt,
        })
    }

    /// Isotropic shorthand `Q = q I_d`.
    pub fn isotropic(dim: usize, q: f64) -> Result<Self> {
        if q <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "power spectral density must be positive, got {q}"
            )));
        }
        Self::new(DMatrix::identity(dim, dim) * q)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn psd(&self) -> &DMatrix<f64> {
        &self.psd
    }

    /// Mean propagation over `dt`: `x + u dt`.
    pub fn propagate_mean(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        dt: f64,
    ) -> Result<DVector<f64>> {
        self.check_dt(dt)?;
        self.check_dim(x, "state")?;
        self.check_dim(u, "input")?;
        Ok(x + u * dt)
    }

    /// Discrete process Jacobian and covariance over `dt`: `(I, Q dt)`.
    pub fn process_jacobian_and_cov(&self, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_dt(dt)?;
        Ok((DMatrix::identity(self.dim, self.dim), &self.psd * dt))
    }

    /// `(Q dt)^{-1}`, the weight of a prior factor over an interval.
    /// Symmetric by construction.
    pub fn process_information(&self, dt: f64) -> Result<DMatrix<f64>> {
        self.check_dt(dt)?;
        Ok(linalg::symmetrize(&(&self.psd_inv / dt)))
    }

    /// Samples a ground-truth trajectory on `t_grid`.
    ///
    /// `x_{k+1} = x_k + u(t_k) dt_k + w_k`, `w_k ~ N(0, Q dt_k)`, with `w_k`
    /// drawn from the stream seeded by `seed`. `NoiseMode::Zero` integrates
    /// the input exactly (the `Q -> 0` testing limit).
    pub fn sample_trajectory(
        &self,
        x0: &DVector<f64>,
        input: InputFn,
        t_grid: &[f64],
        seed: u64,
        mode: NoiseMode,
    ) -> Result<Trajectory> {
        self.check_dim(x0, "initial state")?;
        check_grid(t_grid)?;
        let mut stream = GaussianStream::new(seed);
        let mut samples = Vec::with_capacity(t_grid.len());
        let mut x = x0.clone();
        for (k, &t) in t_grid.iter().enumerate() {
            let u = input(t);
            self.check_dim(&u, "input")?;
            samples.push(StateSample {
                time: t,
                position: x.clone(),
                velocity_input: u.clone(),
            });
            if k + 1 < t_grid.len() {
                let dt = t_grid[k + 1] - t;
                x += u * dt;
                if mode == NoiseMode::Sampled {
                    x += (&self.psd_sqrt * dt.sqrt()) * stream.next_standard_vector(self.dim);
                }
            }
        }
        Trajectory::new(samples, seed)
    }

    /// Inserts additional sample times into an existing trajectory by exact
    /// conditional (bridge) sampling.
    ///
    /// Within an interval `(t_a, t_b)` of the base trajectory the state
    /// conditioned on both endpoints is Gaussian with mean on the straight
    /// line between them (the input is constant inside a base interval, so
    /// its contribution to the mean is exactly linear) and covariance
    /// `Q (t - t_a)(t_b - t)/(t_b - t_a)`. This lets a trajectory sampled on
    /// a coarse grid be refined onto measurement times without re-drawing
    /// the base samples.
    pub fn refine_trajectory(
        &self,
        base: &Trajectory,
        extra_times: &[f64],
        seed: u64,
        mode: NoiseMode,
    ) -> Result<Trajectory> {
        let eps = 1e-9;
        let base_samples = base.samples();
        let t_start = base_samples[0].time;
        let t_end = base_samples[base_samples.len() - 1].time;
        for &t in extra_times {
            if t < t_start - eps || t > t_end + eps {
                return Err(Error::InvalidArgument(format!(
                    "refinement time {t} outside trajectory span [{t_start}, {t_end}]"
                )));
            }
        }
        let mut wanted: Vec<f64> = extra_times.to_vec();
        wanted.sort_by(f64::total_cmp);

        let mut stream = GaussianStream::new(seed);
        let mut samples: Vec<StateSample> = Vec::with_capacity(base_samples.len() + wanted.len());
        let mut wi = 0;
        for (k, s) in base_samples.iter().enumerate() {
            samples.push(s.clone());
            if k + 1 == base_samples.len() {
                break;
            }
            let next = &base_samples[k + 1];
            let (t_a, t_b) = (s.time, next.time);
            // Times strictly inside (t_a, t_b); those within eps of an
            // existing sample are duplicates and are skipped.
            let mut last_inserted: Option<usize> = None;
            while wi < wanted.len() && wanted[wi] < t_b - eps {
                let t = wanted[wi];
                wi += 1;
                if t < t_a + eps {
                    continue;
                }
                if let Some(li) = last_inserted {
                    if (t - samples[li].time).abs() < eps {
                        continue;
                    }
                }
                // Bridge from the most recent sample (base or inserted) to
                // the interval's right endpoint.
                let prev = samples.last().expect("nonempty");
                let (t_p, x_p) = (prev.time, prev.position.clone());
                let alpha = (t - t_p) / (t_b - t_p);
                let mut x = &x_p + (&next.position - &x_p) * alpha;
                if mode == NoiseMode::Sampled {
                    let var_scale = (t - t_p) * (t_b - t) / (t_b - t_p);
                    x += (&self.psd_sqrt * var_scale.sqrt())
                        * stream.next_standard_vector(self.dim);
                }
                samples.push(StateSample {
                    time: t,
                    position: x,
                    velocity_input: s.velocity_input.clone(),
                });
                last_inserted = Some(samples.len() - 1);
            }
            // Skip refinement times that coincide with the right endpoint.
            while wi < wanted.len() && wanted[wi] <= t_b + eps {
                wi += 1;
            }
        }
        Trajectory::new(samples, base.seed())
    }

    fn check_dt(&self, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "time step must be positive, got {dt}"
            )));
        }
        Ok(())
    }

    fn check_dim(&self, v: &DVector<f64>, what: &str) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "{what} has dimension {}, prior expects {}",
                v.len(),
                self.dim
            )));
        }
        Ok(())
    }
}

/// State, input, and time of one trajectory sample.
#[derive(Debug, Clone)]
pub struct StateSample {
    pub time: f64,
    pub position: DVector<f64>,
    pub velocity_input: DVector<f64>,
}

/// Ground-truth (or estimated) trajectory: ordered samples plus the seed
/// used to generate it.
#[derive(Debug, Clone)]
pub struct Trajectory {
    samples: Vec<StateSample>,
    seed: u64,
}

impl Trajectory {
    pub fn new(samples: Vec<StateSample>, seed: u64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "trajectory needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        for w in samples.windows(2) {
            if w[1].time <= w[0].time {
                return Err(Error::InvalidArgument(format!(
                    "trajectory times not strictly increasing at t={}",
                    w[1].time
                )));
            }
        }
        Ok(Self { samples, seed })
    }

    pub fn samples(&self) -> &[StateSample] {
        &self.samples
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn start_time(&self) -> f64 {
        self.samples[0].time
    }

    pub fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].time
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    /// Position at `t` by linear interpolation; errors outside the span.
    pub fn position_at(&self, t: f64) -> Result<DVector<f64>> {
        let eps = 1e-9;
        if t < self.start_time() - eps || t > self.end_time() + eps {
            return Err(Error::InvalidArgument(format!(
                "time {t} outside trajectory span [{}, {}]",
                self.start_time(),
                self.end_time()
            )));
        }
        let idx = self
            .samples
            .partition_point(|s| s.time <= t)
            .min(self.samples.len() - 1)
            .max(1);
        let (a, b) = (&self.samples[idx - 1], &self.samples[idx]);
        let alpha = ((t - a.time) / (b.time - a.time)).clamp(0.0, 1.0);
        Ok(&a.position + (&b.position - &a.position) * alpha)
    }

    /// Exact sample at `t` if one exists within `1e-9` s.
    pub fn sample_at(&self, t: f64) -> Option<&StateSample> {
        let idx = self.samples.partition_point(|s| s.time < t - 1e-9);
        self.samples.get(idx).filter(|s| (s.time - t).abs() < 1e-9)
    }
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "time grid needs at least 2 points, got {}",
            t_grid.len()
        )));
    }
    for w in t_grid.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidArgument(format!(
                "time grid not strictly increasing at t={}",
                w[1]
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior2() -> MotionPrior {
        MotionPrior::isotropic(2, 0.001).unwrap()
    }

    #[test]
    fn mean_propagation() {
        let p = prior2();
        let x = DVector::from_vec(vec![0.0, 0.0]);
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let out = p.propagate_mean(&x, &u, 0.5).unwrap();
        assert_eq!(out, DVector::from_vec(vec![0.5, 0.0]));

        let x = DVector::from_vec(vec![1.0, 2.0]);
        let u = DVector::zeros(2);
        assert_eq!(p.propagate_mean(&x, &u, 10.0).unwrap(), x);

        let x = DVector::from_vec(vec![-4.0, 3.0]);
        let u = DVector::from_vec(vec![-1.0, 1.0]);
        let out = p.propagate_mean(&x, &u, 0.05).unwrap();
        assert!((out - DVector::from_vec(vec![-4.05, 3.05])).norm() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_dt() {
        let p = prior2();
        let x = DVector::zeros(2);
        assert!(p.propagate_mean(&x, &x, 0.0).is_err());
        assert!(p.propagate_mean(&x, &x, -1.0).is_err());
        assert!(p.process_jacobian_and_cov(0.0).is_err());
    }

    #[test]
    fn jacobian_is_identity_and_cov_scales() {
        let p = prior2();
        let (f, q) = p.process_jacobian_and_cov(1.0).unwrap();
        assert_eq!(f, DMatrix::identity(2, 2));
        assert!((q - DMatrix::identity(2, 2) * 0.001).norm() < 1e-15);

        let p = MotionPrior::new(DMatrix::from_diagonal(&DVector::from_vec(vec![
            0.002, 0.004,
        ])))
        .unwrap();
        let (_, q) = p.process_jacobian_and_cov(0.5).unwrap();
        assert!((q[(0, 0)] - 0.001).abs() < 1e-15);
        assert!((q[(1, 1)] - 0.002).abs() < 1e-15);
    }

    #[test]
    fn process_cov_additive_in_dt() {
        let p = prior2();
        let (_, q1) = p.process_jacobian_and_cov(0.3).unwrap();
        let (_, q2) = p.process_jacobian_and_cov(0.7).unwrap();
        let (_, q12) = p.process_jacobian_and_cov(1.0).unwrap();
        assert!((q1 + q2 - q12).norm() < 1e-15);
    }

    #[test]
    fn rejects_singular_psd() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(MotionPrior::new(q).is_err());
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, 1.0]);
        assert!(MotionPrior::new(q).is_err(), "asymmetric Q must be rejected");
    }

    #[test]
    fn zero_noise_mode_integrates_input() {
        let p = prior2();
        let x0 = DVector::from_vec(vec![1.0, -1.0]);
        let u = DVector::from_vec(vec![0.5, 0.25]);
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let traj = p
            .sample_trajectory(&x0, &|_| u.clone(), &grid, 7, NoiseMode::Zero)
            .unwrap();
        let last = &traj.samples()[10];
        assert!((&last.position - (&x0 + &u * 1.0)).norm() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = prior2();
        let x0 = DVector::zeros(2);
        let grid: Vec<f64> = (0..=50).map(|i| i as f64 * 0.1).collect();
        let a = p
            .sample_trajectory(&x0, &|_| DVector::zeros(2), &grid, 42, NoiseMode::Sampled)
            .unwrap();
        let b = p
            .sample_trajectory(&x0, &|_| DVector::zeros(2), &grid, 42, NoiseMode::Sampled)
            .unwrap();
        for (sa, sb) in a.samples().iter().zip(b.samples()) {
            assert_eq!(sa.position[0].to_bits(), sb.position[0].to_bits());
            assert_eq!(sa.position[1].to_bits(), sb.position[1].to_bits());
        }
    }

    #[test]
    fn increment_covariance_matches_q_dt() {
        // Monte-Carlo check: cov(x1 - x0 - u dt) ~= Q dt over many draws.
        let q = DMatrix::from_row_slice(2, 2, &[0.002, 0.0005, 0.0005, 0.001]);
        let p = MotionPrior::new(q.clone()).unwrap();
        let x0 = DVector::zeros(2);
        let u = DVector::from_vec(vec![0.3, -0.2]);
        let dt = 0.5;
        let grid = [0.0, dt];
        let n = 100_000;
        let mut acc = DMatrix::zeros(2, 2);
        for seed in 0..n {
            let traj = p
                .sample_trajectory(&x0, &|_| u.clone(), &grid, seed, NoiseMode::Sampled)
                .unwrap();
            let w = &traj.samples()[1].position - &x0 - &u * dt;
            acc += &w * w.transpose();
        }
        let emp = acc / n as f64;
        let expect = q * dt;
        for i in 0..2 {
            assert!(
                (emp[(i, i)] - expect[(i, i)]).abs() / expect[(i, i)] < 0.05,
                "diag {i}: {} vs {}",
                emp[(i, i)],
                expect[(i, i)]
            );
        }
    }

    #[test]
    fn rejects_bad_grid() {
        let p = prior2();
        let x0 = DVector::zeros(2);
        let u = |_: f64| DVector::zeros(2);
        assert!(p
            .sample_trajectory(&x0, &u, &[0.0], 1, NoiseMode::Zero)
            .is_err());
        assert!(p
            .sample_trajectory(&x0, &u, &[0.0, 1.0, 1.0], 1, NoiseMode::Zero)
            .is_err());
    }

    #[test]
    fn interpolation_between_samples() {
        let p = prior2();
        let x0 = DVector::zeros(2);
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let traj = p
            .sample_trajectory(&x0, &|_| u.clone(), &[0.0, 1.0], 3, NoiseMode::Zero)
            .unwrap();
        let mid = traj.position_at(0.5).unwrap();
        assert!((mid - DVector::from_vec(vec![0.5, 0.0])).norm() < 1e-12);
        assert!(traj.position_at(1.5).is_err());
    }

    #[test]
    fn refinement_preserves_base_and_is_exact_in_zero_noise() {
        let p = prior2();
        let x0 = DVector::zeros(2);
        let u = DVector::from_vec(vec![1.0, -0.5]);
        let grid: Vec<f64> = (0..=10).map(|i| i as f64).collect();
        let base = p
            .sample_trajectory(&x0, &|_| u.clone(), &grid, 11, NoiseMode::Zero)
            .unwrap();
        let refined = p
            .refine_trajectory(&base, &[0.25, 3.5, 3.75, 9.999, 5.0], 13, NoiseMode::Zero)
            .unwrap();
        // Base samples survive bitwise.
        for s in base.samples() {
            let r = refined.sample_at(s.time).expect("base sample kept");
            assert_eq!(r.position, s.position);
        }
        // Zero-noise bridge equals linear interpolation = exact integration.
        let r = refined.sample_at(3.5).unwrap();
        assert!((&r.position - (&x0 + &u * 3.5)).norm() < 1e-12);
    }

    #[test]
    fn refinement_bridge_variance() {
        // Var of the inserted midpoint around the conditional mean must be
        // Q (t-ta)(tb-t)/(tb-ta) = Q * 0.25 for a unit interval midpoint.
        let p = MotionPrior::isotropic(1, 0.04).unwrap();
        let x0 = DVector::zeros(1);
        let grid = [0.0, 1.0];
        let n = 50_000;
        let mut acc = 0.0;
        for seed in 0..n {
            let base = p
                .sample_trajectory(&x0, &|_| DVector::zeros(1), &grid, seed, NoiseMode::Sampled)
                .unwrap();
            let refined = p
                .refine_trajectory(&base, &[0.5], seed ^ 0xabcdef, NoiseMode::Sampled)
                .unwrap();
            let mid = &refined.sample_at(0.5).unwrap().position;
            let mean = (&base.samples()[0].position + &base.samples()[1].position) * 0.5;
            let dev = mid[0] - mean[0];
            acc += dev * dev;
        }
        let emp = acc / n as f64;
        let expect = 0.04 * 0.25;
        assert!((emp - expect).abs() / expect < 0.05, "{emp} vs {expect}");
    }
}

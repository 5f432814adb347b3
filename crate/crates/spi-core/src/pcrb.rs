//! Recursive predictive posterior Cramér-Rao bound (PCRB).
//!
//! The predictive information matrix `J_k` lower-bounds the inverse of the
//! one-step-ahead estimation error correlation: any estimator's predictive
//! error covariance satisfies `P_k >= J_k^{-1}` in the PSD order. For an
//! additive-Gaussian system with process Jacobian `F = I` (WNOV prior) the
//! recursion blocks reduce to
//!
//! ```text
//! D11 = Q_k^{-1} + E[H^T R^{-1} H]     D12 = -Q_k^{-1} = D21^T
//! D22 = Q_k^{-1}                        Q_k = Q dt
//! J_{k+1} = D22 - D21 (D11 + J_k)^{-1} D12
//! ```
//!
//! [`batch_fim_oracle`] provides the non-recursive route to the same
//! quantity — assemble the full joint information matrix over all states
//! and Schur-eliminate everything but the newest — used as an independent
//! cross-check of the recursion.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::motion::MotionPrior;

/// Eigenvalues of a recursion output below this (after symmetrization) are
/// clamped to zero; anything more negative is a hard error.
pub const PSD_CLAMP_TOL: f64 = 1e-10;

/// Predictive information state: the bound matrix plus its position in time.
#[derive(Debug, Clone)]
pub struct InfoState {
    /// Predictive information matrix (symmetric PSD, units m^-2). Its
    /// inverse bounds the one-step-ahead error correlation; the inverse is
    /// never stored.
    pub info: DMatrix<f64>,
    /// Recursion step count.
    pub step: usize,
    /// Time of this state, seconds.
    pub time: f64,
}

impl InfoState {
    /// Largest eigenvalue of `J^{-1}`, i.e. the squared worst-direction
    /// error bound. Infinite when the information matrix is singular.
    pub fn max_error_variance(&self) -> f64 {
        let lam_min = linalg::min_eigenvalue(&self.info);
        if lam_min <= 0.0 {
            f64::INFINITY
        } else {
            1.0 / lam_min
        }
    }
}

/// How to initialize the recursion.
pub enum InitMode {
    /// The distribution over the initial state is known with information
    /// matrix `J_0` (PSD; pass zero for an uninformative start).
    KnownPrior(DMatrix<f64>),
    /// The estimator starts at the accuracy boundary: `J_0 = k_a^{-2} I`.
    /// Information is inverse variance, so a boundary error variance of
    /// `k_a^2` in every direction corresponds to information `k_a^{-2}`;
    /// this is also the stationary point of the constant-rate problem.
    KnownState { accuracy: f64, dim: usize },
}

/// Builds the initial [`InfoState`] at `time = 0`, `step = 0`.
pub fn initialize(mode: InitMode) -> Result<InfoState> {
    let info = match mode {
        InitMode::KnownPrior(j0) => {
            if linalg::asymmetry(&j0) > 1e-9 {
                return Err(Error::NotPsd("initial information not symmetric".into()));
            }
            linalg::clamp_psd(&j0, PSD_CLAMP_TOL, "initial information")?
        }
        InitMode::KnownState { accuracy, dim } => {
            if accuracy <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "accuracy must be positive, got {accuracy}"
                )));
            }
            DMatrix::identity(dim, dim) / (accuracy * accuracy)
        }
    };
    Ok(InfoState {
        info,
        step: 0,
        time: 0.0,
    })
}

/// The four blocks of one recursion step.
#[derive(Debug, Clone)]
pub struct DBlocks {
    pub d11: DMatrix<f64>,
    pub d12: DMatrix<f64>,
    pub d21: DMatrix<f64>,
    pub d22: DMatrix<f64>,
    /// Interval length the blocks were built for; advances `InfoState::time`.
    pub dt: f64,
}

/// Assembles the simplified WNOV blocks for an interval of length `dt`
/// carrying measurement information `sensor_info` (pass the zero matrix for
/// a measurement-free step).
pub fn assemble_dblocks(
    prior: &MotionPrior,
    sensor_info: &DMatrix<f64>,
    dt: f64,
) -> Result<DBlocks> {
    let d = prior.dim();
    if sensor_info.nrows() != d || sensor_info.ncols() != d {
        return Err(Error::InvalidArgument(format!(
            "sensor information is {}x{}, prior dimension is {d}",
            sensor_info.nrows(),
            sensor_info.ncols()
        )));
    }
    let q_inv = prior.process_information(dt)?;
    let d12 = -&q_inv;
    Ok(DBlocks {
        d11: &q_inv + sensor_info,
        d21: d12.transpose(),
        d12,
        d22: q_inv,
        dt,
    })
}

/// One step of the predictive-bound recursion:
/// `J' = D22 - D21 (D11 + J)^{-1} D12`, symmetrized and clamped to PSD.
pub fn recurse(info: &InfoState, blocks: &DBlocks) -> Result<InfoState> {
    let inner = &blocks.d11 + &info.info;
    if linalg::min_eigenvalue(&inner) <= 1e-12 {
        return Err(Error::NumericalSingularity(
            "D11 + J is numerically singular in the bound recursion".into(),
        ));
    }
    let inner_inv = linalg::spd_inverse(&inner, "D11 + J")?;
    let next = &blocks.d22 - &blocks.d21 * inner_inv * &blocks.d12;
    let next = linalg::clamp_psd(&next, PSD_CLAMP_TOL, "recursion output")?;
    Ok(InfoState {
        info: next,
        step: info.step + 1,
        time: info.time + blocks.dt,
    })
}

/// Direct (non-recursive) predictive bound: builds the joint information
/// matrix of all states `x_0..x_n` with per-interval process terms and
/// per-state measurement terms, then Schur-eliminates everything except the
/// last state in one dense solve.
///
/// `sensor_info_seq[i]` is the measurement information collected at state
/// `i` (the start of interval `i`), matching the recursion's convention.
pub fn batch_fim_oracle(
    prior: &MotionPrior,
    sensor_info_seq: &[DMatrix<f64>],
    dt_seq: &[f64],
    j0: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let d = prior.dim();
    let n = dt_seq.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty step sequence".into()));
    }
    if sensor_info_seq.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} sensor-information entries for {n} steps",
            sensor_info_seq.len()
        )));
    }
    let total = (n + 1) * d;
    let mut joint = DMatrix::zeros(total, total);
    joint.view_mut((0, 0), (d, d)).copy_from(j0);
    for (i, &dt) in dt_seq.iter().enumerate() {
        let q_inv = prior.process_information(dt)?;
        let r = i * d;
        let s = (i + 1) * d;
        {
            let mut blk = joint.view_mut((r, r), (d, d));
            blk += &q_inv + &sensor_info_seq[i];
        }
        {
            let mut blk = joint.view_mut((r, s), (d, d));
            blk -= &q_inv;
        }
        {
            let mut blk = joint.view_mut((s, r), (d, d));
            blk -= &q_inv;
        }
        {
            let mut blk = joint.view_mut((s, s), (d, d));
            blk += &q_inv;
        }
    }
    // J_new = C - B^T A^{-1} B with A the big leading block.
    let a = joint.view((0, 0), (n * d, n * d)).into_owned();
    let b = joint.view((0, n * d), (n * d, d)).into_owned();
    let c = joint.view((n * d, n * d), (d, d)).into_owned();
    let a_inv = a
        .try_inverse()
        .ok_or_else(|| Error::NumericalSingularity("joint information block".into()))?;
    let result = c - b.transpose() * a_inv * b;
    linalg::clamp_psd(&result, 1e-8, "batch bound")
}

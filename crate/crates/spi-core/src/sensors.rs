//! Position and range measurement models.
//!
//! Both models are additive white Gaussian: a position sensor observes the
//! state directly with covariance `R_p`; a range sensor observes the
//! distance to each of a set of fixed anchors with variance `sigma_r^2`.
//! Each model provides its Jacobian, simulated measurements, and the
//! expected measurement information `E[H^T R^{-1} H]` that feeds the bound
//! recursion — computed by Gauss-Hermite quadrature for range sensors,
//! analytically for position sensors.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::quadrature::GaussianExpectation;
use crate::rng::{GaussianStream, NoiseMode};

/// States closer than this to an anchor make the range Jacobian blow up.
pub const EPS_DIST: f64 = 1e-6;

/// Direct position observation with noise covariance `R_p`.
#[derive(Debug, Clone)]
pub struct PositionSensor {
    cov: DMatrix<f64>,
    precision: DMatrix<f64>,
    cov_sqrt: DMatrix<f64>,
}

impl PositionSensor {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        let cov = linalg::check_spd(&cov, 1e-9, "position covariance")?;
        let precision = linalg::spd_inverse(&cov, "position covariance")?;
        let cov_sqrt = linalg::psd_sqrt(&cov, "position covariance")?;
        Ok(Self {
            cov,
            precision,
            cov_sqrt,
        })
    }

    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        if variance <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "position variance must be positive, got {variance}"
            )));
        }
        Self::new(DMatrix::identity(dim, dim) * variance)
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Measurement Jacobian, identically `I_d`.
    pub fn jacobian(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim())
    }
}

/// Two-way ranging to a set of fixed anchors, shared variance `sigma_r^2`.
///
/// One "query" ranges to every anchor in the set; the per-query information
/// is the sum of the per-anchor terms.
#[derive(Debug, Clone)]
pub struct RangeSensor {
    variance: f64,
    anchors: Vec<DVector<f64>>,
}

impl RangeSensor {
    pub fn new(variance: f64, anchors: Vec<DVector<f64>>) -> Result<Self> {
        if variance <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "range variance must be positive, got {variance}"
            )));
        }
        if anchors.is_empty() {
            return Err(Error::InvalidArgument("anchor set is empty".into()));
        }
        let dim = anchors[0].len();
        if anchors.iter().any(|a| a.len() != dim) {
            return Err(Error::InvalidArgument(
                "anchors have inconsistent dimensions".into(),
            ));
        }
        Ok(Self { variance, anchors })
    }

    pub fn dim(&self) -> usize {
        self.anchors[0].len()
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn anchors(&self) -> &[DVector<f64>] {
        &self.anchors
    }

    /// Same anchor geometry with a different noise variance.
    pub fn with_variance(&self, variance: f64) -> Result<Self> {
        Self::new(variance, self.anchors.clone())
    }
}

/// Range measurement Jacobian `-(p_a - x)^T / ||p_a - x||`; unit norm.
pub fn range_jacobian(anchor: &DVector<f64>, x: &DVector<f64>) -> Result<RowDVector<f64>> {
    range_jacobian_indexed(anchor, x, 0)
}

fn range_jacobian_indexed(
    anchor: &DVector<f64>,
    x: &DVector<f64>,
    index: usize,
) -> Result<RowDVector<f64>> {
    let diff = anchor - x;
    let dist = diff.norm();
    if dist <= EPS_DIST {
        return Err(Error::SingularGeometry {
            index,
            eps: EPS_DIST,
        });
    }
    Ok((-diff / dist).transpose())
}

/// A stored measurement: who produced it, when, and its value.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasurementValue {
    Position(DVector<f64>),
    Range(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub time: f64,
    pub value: MeasurementValue,
    /// Index into the sensor's anchor set; `Some` iff this is a range record.
    pub anchor_index: Option<usize>,
}

impl MeasurementRecord {
    pub fn is_range(&self) -> bool {
        matches!(self.value, MeasurementValue::Range(_))
    }
}

/// Either measurement model behind one interface.
#[derive(Debug, Clone)]
pub enum SensorModel {
    Position(PositionSensor),
    Range(RangeSensor),
}

impl SensorModel {
    pub fn dim(&self) -> usize {
        match self {
            SensorModel::Position(s) => s.dim(),
            SensorModel::Range(s) => s.dim(),
        }
    }

    /// Expected per-query measurement information `E[H^T R^{-1} H]` for a
    /// state distributed as `N(nominal, spread)`.
    ///
    /// Position sensors have a constant Jacobian, so the expectation is
    /// `R_p^{-1}` exactly and quadrature is bypassed. Range sensors sum the
    /// rank-one terms `sigma^{-2} u u^T` (with `u` the unit state-to-anchor
    /// direction) over a Gauss-Hermite grid of the given order.
    pub fn expected_information(
        &self,
        nominal: &DVector<f64>,
        spread: &DMatrix<f64>,
        quadrature_order: usize,
    ) -> Result<DMatrix<f64>> {
        match self {
            SensorModel::Position(s) => {
                if nominal.len() != s.dim() {
                    return Err(Error::InvalidArgument(format!(
                        "nominal state dimension {} does not match sensor dimension {}",
                        nominal.len(),
                        s.dim()
                    )));
                }
                Ok(s.precision().clone())
            }
            SensorModel::Range(s) => {
                let grid = GaussianExpectation::new(nominal, spread, quadrature_order)?;
                let info = grid.expect_matrix(|x| {
                    let mut m = DMatrix::zeros(s.dim(), s.dim());
                    for (ai, anchor) in s.anchors().iter().enumerate() {
                        let h = range_jacobian_indexed(anchor, x, ai)?;
                        m += h.transpose() * &h / s.variance();
                    }
                    Ok(m)
                })?;
                Ok(linalg::symmetrize(&info))
            }
        }
    }

    /// Simulates the records a single query at `time` produces for the true
    /// state, drawing noise from `stream` (one position record, or one range
    /// record per anchor).
    pub fn simulate_measurement(
        &self,
        true_state: &DVector<f64>,
        time: f64,
        stream: &mut GaussianStream,
        mode: NoiseMode,
    ) -> Result<Vec<MeasurementRecord>> {
        match self {
            SensorModel::Position(s) => {
                let mut value = true_state.clone();
                if mode == NoiseMode::Sampled {
                    value += stream.next_with_sqrt(&s.cov_sqrt);
                }
                Ok(vec![MeasurementRecord {
                    time,
                    value: MeasurementValue::Position(value),
                    anchor_index: None,
                }])
            }
            SensorModel::Range(s) => {
                let sigma = s.variance().sqrt();
                let mut records = Vec::with_capacity(s.anchors().len());
                for (ai, anchor) in s.anchors().iter().enumerate() {
                    let dist = (anchor - true_state).norm();
                    if dist <= EPS_DIST {
                        return Err(Error::SingularGeometry {
                            index: ai,
                            eps: EPS_DIST,
                        });
                    }
                    let noise = if mode == NoiseMode::Sampled {
                        sigma * stream.next_standard()
                    } else {
                        0.0
                    };
                    records.push(MeasurementRecord {
                        time,
                        value: MeasurementValue::Range(dist + noise),
                        anchor_index: Some(ai),
                    });
                }
                Ok(records)
            }
        }
    }
}

//! Sensor parameter identification for continuous-time trajectory
//! estimation.
//!
//! Given a white-noise-on-velocity motion prior and a position or range
//! sensor, this crate answers two questions about a desired estimation
//! accuracy `k_a`:
//!
//! * at what minimal rate must the sensor be queried (given its noise
//!   covariance) so that the predictive posterior Cramér-Rao bound stays
//!   within `k_a` in every direction, and
//! * how loose may the sensor covariance be (given a query rate) under the
//!   same guarantee.
//!
//! Both are answered through small semidefinite feasibility problems built
//! from the recursive predictive PCRB, and validated end-to-end by
//! simulating trajectories, generating measurements, running batch MAP
//! estimation, and comparing RMSE against the target.

pub mod conic;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod motion;
pub mod pcrb;
pub mod quadrature;
pub mod rng;
pub mod sensors;
pub mod solvers;

pub use conic::{AccuracySpec, SolveOutcome, SolveStatus};
pub use error::{Error, Result};
pub use motion::{MotionPrior, StateSample, Trajectory};
pub use pcrb::InfoState;
pub use rng::NoiseMode;
pub use sensors::{MeasurementRecord, MeasurementValue, PositionSensor, RangeSensor, SensorModel};

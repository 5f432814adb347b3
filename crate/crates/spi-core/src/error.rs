//! Error type shared by all solver and model layers.

/// Errors produced by model construction, the bound recursion, the conic
/// layer, and the batch estimator.
///
/// Infeasibility of an optimization problem is *not* an error; it is a
/// reportable outcome carried by [`crate::conic::SolveStatus`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on a plain argument was violated (non-positive dt,
    /// bad bracket, empty grid, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A matrix that must be symmetric positive (semi)definite is not.
    #[error("matrix not symmetric positive (semi)definite: {0}")]
    NotPsd(String),

    /// A state is too close to a range anchor for the measurement model
    /// to be differentiable.
    #[error("singular geometry: state within {eps:e} m of anchor {index}")]
    SingularGeometry { index: usize, eps: f64 },

    /// A matrix inversion or factorization failed beyond recoverable
    /// tolerance.
    #[error("numerical singularity: {0}")]
    NumericalSingularity(String),

    /// The estimation problem does not pin down all states.
    #[error("under-constrained problem: {0}")]
    UnderConstrained(String),
}

pub type Result<T> = std::result::Result<T, Error>;

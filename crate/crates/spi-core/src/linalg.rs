//! Small dense symmetric-matrix helpers used throughout the crate.
//!
//! Everything here operates on `DMatrix<f64>`; the matrices involved are at
//! most `2d x 2d` with `d <= 3`, so eigendecompositions are cheap and used
//! freely as the robust fallback to Cholesky.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative asymmetry `max|A - A^T| / max(1, max|A|)`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut num: f64 = 0.0;
    let mut scale: f64 = 1.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            num = num.max((m[(i, j)] - m[(j, i)]).abs());
            scale = scale.max(m[(i, j)].abs());
        }
    }
    num / scale
}

/// `(A + A^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// True iff the symmetric matrix has min eigenvalue `>= -tol`.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    min_eigenvalue(m) >= -tol
}

/// Validates that `m` is symmetric within `rtol` and strictly positive
/// definite (Cholesky succeeds). Returns the symmetrized matrix.
pub fn check_spd(m: &DMatrix<f64>, rtol: f64, what: &str) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidArgument(format!("{what}: not square")));
    }
    if asymmetry(m) > rtol {
        return Err(Error::NotPsd(format!(
            "{what}: asymmetry {:.3e} exceeds {rtol:.1e}",
            asymmetry(m)
        )));
    }
    let sym = symmetrize(m);
    if sym.clone().cholesky().is_none() {
        return Err(Error::NotPsd(format!(
            "{what}: Cholesky failed (min eigenvalue {:.3e})",
            min_eigenvalue(&sym)
        )));
    }
    Ok(sym)
}

/// Inverse of a symmetric positive definite matrix.
///
/// Cholesky first; falls back to an eigendecomposition so that matrices
/// near the PSD boundary produce a clear error instead of garbage.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    if let Some(chol) = sym.clone().cholesky() {
        return Ok(chol.inverse());
    }
    let eig = sym.symmetric_eigen();
    let mut inv_vals = eig.eigenvalues.clone();
    for v in inv_vals.iter_mut() {
        if *v <= 1e-14 {
            return Err(Error::NumericalSingularity(format!(
                "{what}: eigenvalue {v:.3e} too small to invert"
            )));
        }
        *v = 1.0 / *v;
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose())
}

/// Solves `M x = b` for symmetric positive definite `M`.
pub fn spd_solve(m: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let sym = symmetrize(m);
    if let Some(chol) = sym.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    Ok(spd_inverse(&sym, what)? * b)
}

/// Projects a nearly-PSD symmetric matrix onto the PSD cone.
///
/// Eigenvalues in `[-tol, 0)` are clamped to zero; anything below `-tol`
/// is treated as a real defect and raises an error.
pub fn clamp_psd(m: &DMatrix<f64>, tol: f64, what: &str) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -tol {
            return Err(Error::NotPsd(format!(
                "{what}: eigenvalue {:.3e} below -{tol:.1e}",
                *v
            )));
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// Symmetric square root `L` with `L L^T = M` for a PSD matrix, via
/// eigendecomposition (handles singular and zero matrices).
pub fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -1e-10 {
            return Err(Error::NotPsd(format!(
                "{what}: eigenvalue {:.3e} negative",
                *v
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// `||A - B||_F / max(1, ||B||_F)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

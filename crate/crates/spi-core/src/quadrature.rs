//! Gauss-Hermite quadrature for Gaussian expectations.
//!
//! Nodes and weights come from the Golub-Welsch eigenvalue method on the
//! Hermite Jacobi matrix (physicists' convention, weight `exp(-x^2)`). For
//! a d-dimensional Gaussian the rule is tensorized and the affine change of
//! variables `x = mu + sqrt(2) L xi` (with `L L^T = cov`) maps it onto
//! `E_{x ~ N(mu, cov)}[f(x)]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// One-dimensional Gauss-Hermite rule: `int exp(-x^2) f(x) dx ~= sum w_i f(x_i)`.
#[derive(Debug, Clone)]
pub struct HermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl HermiteRule {
    /// Computes the order-`n` rule (exact for polynomials of degree `2n-1`).
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument(
                "quadrature order must be >= 1".into(),
            ));
        }
        if order == 1 {
            return Ok(Self {
                nodes: vec![0.0],
                weights: vec![std::f64::consts::PI.sqrt()],
            });
        }
        // Jacobi matrix for Hermite polynomials: off-diagonal sqrt(k/2).
        let mut jacobi = DMatrix::zeros(order, order);
        for k in 1..order {
            let b = (k as f64 / 2.0).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eig = jacobi.symmetric_eigen();
        let mu0 = std::f64::consts::PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| {
                let node = eig.eigenvalues[i];
                let v0 = eig.eigenvectors[(0, i)];
                (node, mu0 * v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        })
    }
}

/// Tensorized Gaussian expectation rule over `N(mean, cov)`.
///
/// `cov` may be singular or zero; the change of variables uses the symmetric
/// PSD square root, so degenerate directions simply collapse to the mean.
#[derive(Debug, Clone)]
pub struct GaussianExpectation {
    points: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl GaussianExpectation {
    pub fn new(mean: &DVector<f64>, cov: &DMatrix<f64>, order: usize) -> Result<Self> {
        let dim = mean.len();
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::InvalidArgument(format!(
                "spread is {}x{}, state dimension is {dim}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let rule = HermiteRule::new(order)?;
        let sqrt_cov = linalg::psd_sqrt(cov, "quadrature spread")? * std::f64::consts::SQRT_2;
        let norm = std::f64::consts::PI.powf(-(dim as f64) / 2.0);

        let total = rule.nodes.len().pow(dim as u32);
        let mut points = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        let mut index = vec![0usize; dim];
        loop {
            let xi = DVector::from_fn(dim, |i, _| rule.nodes[index[i]]);
            let w: f64 = index.iter().map(|&i| rule.weights[i]).product();
            points.push(mean + &sqrt_cov * xi);
            weights.push(w * norm);
            // odometer increment over the tensor grid
            let mut axis = 0;
            loop {
                if axis == dim {
                    return Ok(Self { points, weights });
                }
                index[axis] += 1;
                if index[axis] < rule.nodes.len() {
                    break;
                }
                index[axis] = 0;
                axis += 1;
            }
        }
    }

    /// Evaluation points (rows of the tensor grid mapped through the
    /// Gaussian's affine transform).
    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    /// Normalized weights; they sum to 1.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted sum of a matrix-valued integrand over the grid.
    pub fn expect_matrix<F>(&self, mut f: F) -> Result<DMatrix<f64>>
    where
        F: FnMut(&DVector<f64>) -> Result<DMatrix<f64>>,
    {
        let mut acc: Option<DMatrix<f64>> = None;
        for (p, &w) in self.points.iter().zip(&self.weights) {
            let v = f(p)? * w;
            acc = Some(match acc {
                Some(a) => a + v,
                None => v,
            });
        }
        acc.ok_or_else(|| Error::InvalidArgument("empty quadrature grid".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_three_matches_known_rule() {
        // Physicists' order-3 rule: nodes +-sqrt(3/2), 0; weights
        // sqrt(pi)/6, 2 sqrt(pi)/3, sqrt(pi)/6.
        let r = HermiteRule::new(3).unwrap();
        let s = (1.5f64).sqrt();
        let sp = std::f64::consts::PI.sqrt();
        assert!((r.nodes[0] + s).abs() < 1e-12);
        assert!(r.nodes[1].abs() < 1e-12);
        assert!((r.nodes[2] - s).abs() < 1e-12);
        assert!((r.weights[0] - sp / 6.0).abs() < 1e-12);
        assert!((r.weights[1] - 2.0 * sp / 3.0).abs() < 1e-12);
        assert!((r.weights[2] - sp / 6.0).abs() < 1e-12);
    }

    #[test]
    fn weights_sum_to_one_after_normalization() {
        let mean = DVector::zeros(2);
        let cov = DMatrix::identity(2, 2);
        for order in 1..=5 {
            let q = GaussianExpectation::new(&mean, &cov, order).unwrap();
            let s: f64 = q.weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "order {order}: {s}");
        }
    }

    #[test]
    fn second_moment_exact() {
        // E[x x^T] = cov for N(0, cov); order 2 is exact for quadratics.
        let mean = DVector::zeros(2);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
        let q = GaussianExpectation::new(&mean, &cov, 2).unwrap();
        let m = q.expect_matrix(|x| Ok(x * x.transpose())).unwrap();
        assert!((m - cov).norm() < 1e-12);
    }

    #[test]
    fn zero_spread_collapses_to_mean() {
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        let cov = DMatrix::zeros(2, 2);
        let q = GaussianExpectation::new(&mean, &cov, 3).unwrap();
        for p in q.points() {
            assert!((p - &mean).norm() < 1e-15);
        }
    }

    #[test]
    fn rejects_order_zero() {
        assert!(HermiteRule::new(0).is_err());
    }
}

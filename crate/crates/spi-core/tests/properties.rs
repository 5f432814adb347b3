//! Property tests over randomized instances.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use spi_core::conic::{self, AccuracySpec, LmiParameterization};
use spi_core::linalg;
use spi_core::motion::MotionPrior;
use spi_core::pcrb::{assemble_dblocks, batch_fim_oracle, initialize, recurse, InitMode};
use spi_core::sensors::range_jacobian;

/// Random symmetric PSD matrix from an eigenbasis rotation (d = 2).
fn psd2(lam1: f64, lam2: f64, angle: f64) -> DMatrix<f64> {
    let (c, s) = (angle.cos(), angle.sin());
    let v = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![lam1, lam2]));
    linalg::symmetrize(&(&v * d * v.transpose()))
}

proptest! {
    #[test]
    fn mean_propagation_is_affine(
        x1 in proptest::array::uniform2(-10.0f64..10.0),
        x2 in proptest::array::uniform2(-10.0f64..10.0),
        u1 in proptest::array::uniform2(-2.0f64..2.0),
        u2 in proptest::array::uniform2(-2.0f64..2.0),
        a in -3.0f64..3.0,
        dt in 1e-3f64..10.0,
    ) {
        let prior = MotionPrior::isotropic(2, 0.01).unwrap();
        let x1 = DVector::from_column_slice(&x1);
        let x2 = DVector::from_column_slice(&x2);
        let u1 = DVector::from_column_slice(&u1);
        let u2 = DVector::from_column_slice(&u2);
        let lhs = prior
            .propagate_mean(&(&x1 * a + &x2), &(&u1 * a + &u2), dt)
            .unwrap();
        let rhs = prior.propagate_mean(&x1, &u1, dt).unwrap() * a
            + prior.propagate_mean(&x2, &u2, dt).unwrap();
        prop_assert!((lhs - rhs).norm() < 1e-9);
    }

    #[test]
    fn process_covariance_additive(
        lam1 in 1e-4f64..1e-1,
        lam2 in 1e-4f64..1e-1,
        angle in 0.0f64..std::f64::consts::PI,
        dt1 in 1e-3f64..5.0,
        dt2 in 1e-3f64..5.0,
    ) {
        let prior = MotionPrior::new(psd2(lam1, lam2, angle)).unwrap();
        let (_, qa) = prior.process_jacobian_and_cov(dt1).unwrap();
        let (_, qb) = prior.process_jacobian_and_cov(dt2).unwrap();
        let (_, qab) = prior.process_jacobian_and_cov(dt1 + dt2).unwrap();
        prop_assert!((qa + qb - qab).norm() < 1e-12);
    }

    #[test]
    fn range_jacobian_unit_norm(
        ax in -50.0f64..50.0,
        ay in -50.0f64..50.0,
        x in -50.0f64..50.0,
        y in -50.0f64..50.0,
    ) {
        let anchor = DVector::from_vec(vec![ax, ay]);
        let state = DVector::from_vec(vec![x, y]);
        prop_assume!((&anchor - &state).norm() > 1e-3);
        let j = range_jacobian(&anchor, &state).unwrap();
        prop_assert!((j.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recursion_output_symmetric_psd_and_matches_batch(
        lam1 in 1e-4f64..1e-1,
        lam2 in 1e-4f64..1e-1,
        angle in 0.0f64..std::f64::consts::PI,
        j1 in 0.0f64..100.0,
        j2 in 0.0f64..100.0,
        w1 in 0.0f64..500.0,
        w2 in 0.0f64..500.0,
        dt in 1e-2f64..2.0,
        steps in 1usize..6,
    ) {
        let prior = MotionPrior::new(psd2(lam1, lam2, angle)).unwrap();
        let j0 = psd2(j1, j2, angle * 0.7);
        let info = psd2(w1, w2, angle * 1.3);
        let mut state = initialize(InitMode::KnownPrior(j0.clone())).unwrap();
        let blocks = assemble_dblocks(&prior, &info, dt).unwrap();
        for _ in 0..steps {
            state = recurse(&state, &blocks).unwrap();
            prop_assert!(linalg::asymmetry(&state.info) < 1e-12);
            prop_assert!(linalg::min_eigenvalue(&state.info) >= -1e-12);
        }
        let infos = vec![info.clone(); steps];
        let dts = vec![dt; steps];
        let batch = batch_fim_oracle(&prior, &infos, &dts, &j0).unwrap();
        prop_assert!(linalg::rel_frobenius(&state.info, &batch) < 1e-8);
    }

    #[test]
    fn rate_feasible_set_is_upward_closed(
        q in 1e-4f64..1e-2,
        sensor_var in 1e-3f64..1e-1,
        ka in 0.01f64..0.1,
    ) {
        let prior = MotionPrior::isotropic(1, q).unwrap();
        let info = initialize(InitMode::KnownState { accuracy: ka, dim: 1 }).unwrap();
        let acc = AccuracySpec::new(ka).unwrap();
        let lmi = conic::build_lmi(
            &info,
            &prior,
            LmiParameterization::ScalarRate {
                sensor_info: DMatrix::from_element(1, 1, 1.0 / sensor_var),
            },
            &acc,
        )
        .unwrap();
        // Scan a geometric rate grid: once feasible, always feasible.
        let mut seen_feasible = false;
        for k in 0..120 {
            let m = 1e-3 * (1.2f64).powi(k);
            let feasible = conic::is_feasible(&lmi.eval_rate(m).unwrap(), conic::FEAS_TOL).unwrap();
            if seen_feasible {
                prop_assert!(feasible, "feasible set not upward closed at m={m}");
            }
            seen_feasible |= feasible;
        }
    }
}

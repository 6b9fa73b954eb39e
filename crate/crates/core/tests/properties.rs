//! Randomized invariants of the matrix functions, the Lyapunov-type solver,
//! and the flow estimators.

use limflow::infoflow::{info_flow_from_model, info_flow_liang_from_covariances};
use limflow::linalg::{expm, logm_principal, solve_two_sided, two_sided_residual, Matrix};
use proptest::prelude::*;

fn matrix(n: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-scale..scale, n * n).prop_map(move |v| Matrix::from_row_slice(n, n, &v))
}

/// Strictly stable: a random matrix shifted left of its Gershgorin discs.
fn stable(n: usize) -> impl Strategy<Value = Matrix> {
    matrix(n, 1.0).prop_map(move |m| {
        let shift = (0..n)
            .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        m - Matrix::identity(n, n) * (shift + 0.1)
    })
}

fn spd(n: usize) -> impl Strategy<Value = Matrix> {
    matrix(n, 1.0).prop_map(move |m| &m * m.transpose() + Matrix::identity(n, n) * 0.5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_inverts_exp_for_small_generators(m in matrix(3, 0.4)) {
        let back = logm_principal(&expm(&m, 1.0).unwrap()).unwrap();
        prop_assert!((&back - &m).amax() <= 1e-9 * (1.0 + m.amax()));
    }

    #[test]
    fn exp_is_a_semigroup(m in matrix(3, 1.5), s in 0.0f64..2.0, t in 0.0f64..2.0) {
        let lhs = expm(&m, s + t).unwrap();
        let rhs = expm(&m, s).unwrap() * expm(&m, t).unwrap();
        prop_assert!((&lhs - &rhs).amax() <= 1e-10 * (1.0 + lhs.amax()));
    }

    #[test]
    fn two_sided_solution_has_small_residual(f in stable(3), s in spd(3)) {
        let x = solve_two_sided(&f, &s).unwrap();
        prop_assert!(two_sided_residual(&f, &x, &s) <= 1e-9 * s.norm());
        prop_assert!((&x - x.transpose()).amax() == 0.0);
    }

    #[test]
    fn flows_are_invariant_to_diagonal_scaling(
        a in stable(3),
        c in spd(3),
        d in prop::collection::vec(0.1f64..10.0, 3),
    ) {
        let dm = Matrix::from_diagonal(&nalgebra::DVector::from_column_slice(&d));
        let dinv = dm.clone().try_inverse().unwrap();
        let (a2, c2) = (&dm * &a * &dinv, &dm * &c * &dm);
        let t1 = info_flow_from_model(&a, &c).unwrap();
        let t2 = info_flow_from_model(&a2, &c2).unwrap();
        prop_assert!((&t1.t - &t2.t).amax() <= 1e-10 * (1.0 + t1.t.amax()));

        // Exact covariance data: Cd = C Aᵀ.
        let l1 = info_flow_liang_from_covariances(&c, &(&c * a.transpose())).unwrap();
        let l2 = info_flow_liang_from_covariances(&c2, &(&c2 * a2.transpose())).unwrap();
        prop_assert!((&l1.t - &l2.t).amax() <= 1e-9 * (1.0 + l1.t.amax()));
        // With exact derivative covariances the two estimators coincide.
        prop_assert!((&l1.t - &t1.t).amax() <= 1e-9 * (1.0 + t1.t.amax()));
    }
}

use gridswitch::case::{fixtures, GridCase};
use gridswitch::dcopf::{build_opf, solve_dcopf_with, LimitScaling, OpfOptions, SwitchVector};
use gridswitch::diffgrad::{build_kkt_jacobians, finite_diff_grad, implicit_grad, solve_sensitivity};
use gridswitch::qp::QpSettings;
use proptest::prelude::*;

fn opts(scaling: LimitScaling) -> OpfOptions {
    OpfOptions {
        limit_scaling: scaling,
        qp: QpSettings::default(),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_pair(case: &GridCase, alpha: f64, z: &[f64], scaling: LimitScaling) -> Result<(), TestCaseError> {
    let o = opts(scaling);
    let pd: Vec<f64> = case.base_demand.iter().map(|d| d * alpha).collect();
    let d = solve_dcopf_with(case, &pd, &SwitchVector::relaxed(z).unwrap(), &o).unwrap();
    // At degenerate vertices the polish declines and the solver stops in the
    // interior; finite differences then see drift of the central path.
    prop_assume!(d.is_optimal() && d.kkt_residual <= 1e-9);
    let imp = implicit_grad(case, &pd, z, &o).unwrap();
    let fd = finite_diff_grad(case, &pd, z, 1e-5, &o).unwrap();
    prop_assume!(fd.active_set_changed.iter().all(|c| !c) && fd.reliable.iter().all(|&r| r));
    let diff: Vec<f64> = imp.grad.iter().zip(&fd.grad).map(|(a, b)| a - b).collect();
    let err = norm(&diff) / norm(&fd.grad).max(1e-6 * (1.0 + d.cost.abs()));
    prop_assert!(err <= 1e-4, "implicit {:?} fd {:?}", imp.grad, fd.grad);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn triangle_gradient_matches_finite_differences(
        alpha in 1.0f64..1.1,
        z in prop::collection::vec(0.3f64..0.999, 3),
        unscaled in any::<bool>(),
    ) {
        let s = if unscaled { LimitScaling::Unscaled } else { LimitScaling::Scaled };
        check_pair(&fixtures::triangle3(), alpha, &z, s)?;
    }

    #[test]
    fn pent5_gradient_matches_finite_differences(
        alpha in 1.0f64..1.1,
        z in prop::collection::vec(0.3f64..0.999, 6),
        unscaled in any::<bool>(),
    ) {
        let s = if unscaled { LimitScaling::Unscaled } else { LimitScaling::Scaled };
        check_pair(&fixtures::pent5(), alpha, &z, s)?;
    }
}

#[test]
fn sensitivity_columns_match_resolves() {
    let case = fixtures::triangle3();
    let pd: Vec<f64> = case.base_demand.iter().copied().collect();
    let z = [0.8, 0.9, 0.7];
    let step = 1e-5;
    let solve = |zz: &[f64]| {
        let p = build_opf(&case, &pd, &SwitchVector::relaxed(zz).unwrap(), LimitScaling::Scaled).unwrap();
        p.solve(&case, &QpSettings::default()).unwrap()
    };
    let p = build_opf(&case, &pd, &SwitchVector::relaxed(&z).unwrap(), LimitScaling::Scaled).unwrap();
    let (sol, _) = p.solve(&case, &QpSettings::default()).unwrap();
    assert!(sol.is_optimal());
    let sens = solve_sensitivity(&build_kkt_jacobians(&case, &p, &sol).unwrap()).unwrap();
    for l in 0..3 {
        let (mut up, mut dn) = (z.to_vec(), z.to_vec());
        up[l] += step;
        dn[l] -= step;
        let col = (&solve(&up).0.x - &solve(&dn).0.x) / (2.0 * step);
        let got = sens.dx_dz.column(l).rows(0, col.len()).into_owned();
        let err = (&got - &col).norm() / col.norm().max(1e-6);
        assert!(err < 1e-4, "line {l}: {got} vs {col}");
    }
}

#[test]
fn uncongested_gradient_vanishes() {
    let case = fixtures::triangle3().with_flow_limit_scale(10.0);
    let pd: Vec<f64> = case.base_demand.iter().copied().collect();
    for scaling in [LimitScaling::Scaled, LimitScaling::Unscaled] {
        let g = implicit_grad(&case, &pd, &[0.9999; 3], &opts(scaling)).unwrap();
        assert!(g.grad.iter().all(|v| v.abs() < 1e-6), "{:?}", g.grad);
    }
}

#[test]
fn closing_the_congested_line_costs_more_with_fixed_ratings() {
    // With fixed ratings, strengthening line 1-3 pulls more of the cheap
    // unit's flow onto the congested path.
    let case = fixtures::triangle3();
    let pd: Vec<f64> = case.base_demand.iter().copied().collect();
    let z = [0.9999; 3];
    let g = implicit_grad(&case, &pd, &z, &opts(LimitScaling::Unscaled)).unwrap();
    let fd = finite_diff_grad(&case, &pd, &[0.9998; 3], 1e-4, &opts(LimitScaling::Unscaled)).unwrap();
    assert!(g.grad[2] > 0.0, "{:?}", g.grad);
    assert!(fd.grad[2] > 0.0);
    assert!(g.grad[0] < 0.0 && g.grad[1] < 0.0);
}

#[test]
fn scaled_ratings_gradient_sign_follows_finite_differences() {
    let case = fixtures::triangle3();
    let pd: Vec<f64> = case.base_demand.iter().copied().collect();
    let z = [0.9; 3];
    let o = opts(LimitScaling::Scaled);
    let g = implicit_grad(&case, &pd, &z, &o).unwrap();
    let fd = finite_diff_grad(&case, &pd, &z, 1e-5, &o).unwrap();
    for l in 0..3 {
        assert_eq!(g.grad[l].signum(), fd.grad[l].signum(), "{:?} vs {:?}", g.grad, fd.grad);
    }
}

/// Reordering lines reorders the gradient.
#[test]
fn gradient_is_line_order_equivariant() {
    let case = fixtures::mesh8();
    let n = case.n_line();
    let perm: Vec<usize> = (0..n).rev().collect();
    let mut p = case.clone();
    p.line_from = perm.iter().map(|&l| case.line_from[l]).collect();
    p.line_to = perm.iter().map(|&l| case.line_to[l]).collect();
    p.susceptance = nalgebra::DVector::from_iterator(n, perm.iter().map(|&l| case.susceptance[l]));
    p.flow_max = nalgebra::DVector::from_iterator(n, perm.iter().map(|&l| case.flow_max[l]));
    p.flow_min = nalgebra::DVector::from_iterator(n, perm.iter().map(|&l| case.flow_min[l]));
    p.branch_incidence = case.branch_incidence.select_rows(perm.iter());

    let pd: Vec<f64> = case.base_demand.iter().copied().collect();
    let z: Vec<f64> = (0..n).map(|l| 0.9 + 0.005 * l as f64).collect();
    let zp: Vec<f64> = perm.iter().map(|&l| z[l]).collect();
    let a = implicit_grad(&case, &pd, &z, &OpfOptions::default()).unwrap();
    let b = implicit_grad(&p, &pd, &zp, &OpfOptions::default()).unwrap();
    assert!((a.dispatch.cost - b.dispatch.cost).abs() < 1e-6 * a.dispatch.cost);
    let scale = norm(&a.grad).max(1.0);
    for (k, &l) in perm.iter().enumerate() {
        assert!((b.grad[k] - a.grad[l]).abs() < 1e-5 * scale, "{:?} vs {:?}", a.grad, b.grad);
    }
}

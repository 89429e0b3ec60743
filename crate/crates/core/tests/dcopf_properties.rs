use gridswitch::case::{fixtures, GridCase};
use gridswitch::dcopf::{
    build_opf, check_feasibility, solve_dcopf, solve_ed, LimitScaling, RowKind, SwitchVector,
};
use gridswitch::ots::enumerate_ots;
use gridswitch::qp::{solve_qp, QpSettings};
use proptest::prelude::*;

fn cases() -> Vec<GridCase> {
    vec![fixtures::triangle3(), fixtures::pent5(), fixtures::mesh8()]
}

fn scaled_load(case: &GridCase, alpha: &[f64]) -> Vec<f64> {
    case.base_demand.iter().zip(alpha.iter().cycle()).map(|(d, a)| d * a).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn all_closed_relaxed_equals_standard(k in 0usize..3, alpha in prop::collection::vec(0.9f64..1.1, 8)) {
        let case = &cases()[k];
        let pd = scaled_load(case, &alpha);
        let n = case.n_line();
        let bin = solve_dcopf(case, &pd, &SwitchVector::all_closed(n)).unwrap();
        let rel = solve_dcopf(case, &pd, &SwitchVector::relaxed(&vec![1.0; n]).unwrap()).unwrap();
        prop_assert_eq!(bin.is_optimal(), rel.is_optimal());
        if bin.is_optimal() {
            prop_assert!((bin.cost - rel.cost).abs() <= 1e-6 * bin.cost.abs().max(1.0));
        }
    }

    #[test]
    fn ed_below_ots_below_opf(k in 0usize..3, alpha in prop::collection::vec(0.9f64..1.1, 8)) {
        let case = &cases()[k];
        let pd = scaled_load(case, &alpha);
        let opf = solve_dcopf(case, &pd, &SwitchVector::all_closed(case.n_line())).unwrap();
        prop_assume!(opf.is_optimal());
        let ed = solve_ed(case, &pd, &QpSettings::default()).unwrap();
        let ots = enumerate_ots(case, &pd, None, &Default::default()).unwrap();
        let tol = 1e-6 * opf.cost.abs().max(1.0);
        prop_assert!(ed.cost <= ots.objective + tol, "ED {} OTS {}", ed.cost, ots.objective);
        prop_assert!(ots.objective <= opf.cost + tol, "OTS {} OPF {}", ots.objective, opf.cost);
    }

    #[test]
    fn relaxing_limits_never_raises_cost(k in 0usize..3, s in 1.0f64..3.0, open in prop::collection::vec(any::<bool>(), 12)) {
        let case = &cases()[k];
        let pd: Vec<f64> = case.base_demand.iter().copied().collect();
        let closed: Vec<bool> = (0..case.n_line()).map(|l| !open[l] || l % 3 != 0).collect();
        let z = SwitchVector::binary(&closed);
        let tight = solve_dcopf(case, &pd, &z).unwrap();
        let loose = solve_dcopf(&case.with_flow_limit_scale(s), &pd, &z).unwrap();
        if tight.is_optimal() {
            prop_assert!(loose.is_optimal());
            prop_assert!(loose.cost <= tight.cost + 1e-6 * tight.cost.abs().max(1.0));
        }
    }

    #[test]
    fn slack_lines_carry_no_price(k in 0usize..3, alpha in prop::collection::vec(0.9f64..1.1, 8)) {
        let case = &cases()[k];
        let pd = scaled_load(case, &alpha);
        let z = SwitchVector::all_closed(case.n_line());
        let p = build_opf(case, &pd, &z, LimitScaling::Scaled).unwrap();
        let settings = QpSettings::default();
        let sol = solve_qp(&p.qp, &settings).unwrap();
        prop_assume!(sol.is_optimal());
        let slack = &p.qp.h_ineq - &p.qp.g_ineq * &sol.x;
        for (r, kind) in p.index.ineq_rows.iter().enumerate() {
            if matches!(kind, RowKind::LineUpper(_) | RowKind::LineLower(_)) && slack[r] > 10.0 * settings.tol {
                prop_assert!(sol.mu[r] <= 10.0 * settings.tol * (1.0 + sol.mu.amax()), "row {} mu {} slack {}", r, sol.mu[r], slack[r]);
            }
        }
    }

    #[test]
    fn optimal_dispatch_passes_audit(k in 0usize..3, alpha in prop::collection::vec(0.9f64..1.1, 8), mask in 0u32..4096) {
        let case = &cases()[k];
        let pd = scaled_load(case, &alpha);
        let closed: Vec<bool> = (0..case.n_line()).map(|l| mask & (1 << l) == 0).collect();
        let z = SwitchVector::binary(&closed);
        let d = solve_dcopf(case, &pd, &z).unwrap();
        let r = check_feasibility(case, &pd, &z, &d, 1e-6).unwrap();
        if d.is_optimal() {
            prop_assert!(!r.violated, "{:?}", r);
        }
    }
}

/// Brute force over the cheap unit's output in 0.1 MW steps with flows from
/// the bus-angle solution of the closed ring.
#[test]
fn triangle_grid_search_oracle() {
    let case = fixtures::triangle3();
    let pd: Vec<f64> = case.base_demand.iter().copied().collect();
    let mut best = f64::INFINITY;
    for k in 0..=1000 {
        let p1 = k as f64 * 0.001;
        let p2 = 1.0 - p1;
        let f13 = (2.0 * p1 + p2) / 3.0;
        let f23 = (p1 + 2.0 * p2) / 3.0;
        let f12 = (p1 - p2) / 3.0;
        if f13.abs() <= 0.6 + 1e-12 && f23.abs() <= 1.0 && f12.abs() <= 1.0 {
            best = best.min(case.generation_cost(&[p1, p2]));
        }
    }
    let opf = solve_dcopf(&case, &pd, &SwitchVector::all_closed(3)).unwrap();
    assert!((best - 1800.0).abs() < 1e-6);
    assert!((opf.cost - best).abs() < 1e-5);
    let open = solve_dcopf(&case, &pd, &SwitchVector::binary(&[true, true, false])).unwrap();
    assert!((open.cost - 1000.0).abs() < 1e-5);
    assert!((open.pg[0] - 1.0).abs() < 1e-7 && open.pg[1].abs() < 1e-7);
}

#[test]
fn ed_serves_from_cheapest_unit() {
    let case = fixtures::triangle3();
    let pd: Vec<f64> = case.base_demand.iter().copied().collect();
    let ed = solve_ed(&case, &pd, &QpSettings::default()).unwrap();
    assert!((ed.cost - 1000.0).abs() < 1e-6);
    let too_much = vec![0.0, 0.0, 4.5];
    assert!(!solve_ed(&case, &too_much, &QpSettings::default()).unwrap().is_optimal());
}

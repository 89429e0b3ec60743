use gridswitch::case::{fixtures, generate_dataset, split_dataset, Dataset, GridCase, SamplingConfig, SplitFractions, SplitTag};
use gridswitch::dcopf::{solve_dcopf, LimitScaling, OpfOptions, SwitchVector};
use gridswitch::nn::init_network;
use gridswitch::pipeline::{
    evaluate, infer, sweep_line_limits, train, EvalConfig, Method, TrainConfig,
};

fn dataset(case: &GridCase, n: usize, lo: f64, hi: f64, seed: u64) -> Dataset {
    let d = generate_dataset(
        case,
        SamplingConfig {
            count: n,
            scale_min: lo,
            scale_max: hi,
        },
        seed,
        |pd| solve_dcopf(case, pd, &SwitchVector::all_closed(case.n_line())).unwrap().is_optimal(),
    )
    .unwrap();
    split_dataset(d, SplitFractions::default(), seed).unwrap()
}

fn unscaled() -> OpfOptions {
    OpfOptions {
        limit_scaling: LimitScaling::Unscaled,
        ..OpfOptions::default()
    }
}

/// Below 100 MW the cheap unit can serve everything radially once line 1-3
/// opens, and fixed ratings give that line a positive cost gradient.
#[test]
fn learns_to_open_congested_line_with_fixed_ratings() {
    let case = fixtures::triangle3();
    let data = dataset(&case, 60, 0.9, 1.0, 11);
    let config = TrainConfig {
        epochs: 8,
        batch_size: 10,
        lr: 1e-2,
        hidden_dim: 32,
        opf: unscaled(),
        ..TrainConfig::default()
    };
    let out = train(&case, &data, &config).unwrap();
    assert!(out.best_epoch > 0, "{:#?}", out.curve);

    let pd: Vec<f64> = case.base_demand.iter().copied().collect();
    let inf = infer(&out.params, &case, &pd, 0.5, &unscaled()).unwrap();
    assert_eq!(inf.z_bar.open_lines(), vec![2]);
    assert!((inf.cost().unwrap() - 1000.0).abs() < 1e-4);

    let test: Vec<_> = data.with_tag(SplitTag::Test).cloned().collect();
    let cfg = EvalConfig {
        methods: vec![Method::Dcopf, Method::OtsExact, Method::Dadnn],
        opf: unscaled(),
        ..EvalConfig::default()
    };
    let rows = evaluate(Some(&out.params), &case, &test, &cfg).unwrap();
    let cost = |m: Method| rows.iter().find(|r| r.method == m).unwrap().avg_cost_k;
    let tol = 1e-6;
    assert!(cost(Method::OtsExact) <= cost(Method::Dadnn) + tol);
    assert!(cost(Method::Dadnn) <= cost(Method::Dcopf) + tol);
    assert!(cost(Method::Dadnn) < 0.9 * cost(Method::Dcopf), "{rows:#?}");
}

#[test]
fn epoch_zero_loss_is_dcopf_cost() {
    let case = fixtures::pent5();
    let data = dataset(&case, 20, 1.0, 1.1, 2);
    let config = TrainConfig {
        epochs: 1,
        hidden_dim: 16,
        ..TrainConfig::default()
    };
    let out = train(&case, &data, &config).unwrap();
    let train_pds: Vec<_> = data.with_tag(SplitTag::Train).collect();
    let mean = train_pds
        .iter()
        .map(|s| solve_dcopf(&case, &s.pd, &SwitchVector::all_closed(case.n_line())).unwrap().cost)
        .sum::<f64>()
        / train_pds.len() as f64;
    let e0 = &out.curve[0];
    assert_eq!(e0.epoch, 0);
    assert!((e0.train_loss - mean).abs() <= 1e-3 * mean, "{} vs {}", e0.train_loss, mean);
    assert_eq!(out.curve.len(), 2);
}

#[test]
fn benchmark_costs_are_ordered() {
    let case = fixtures::mesh8();
    let data = dataset(&case, 12, 1.0, 1.1, 5);
    let model = init_network(case.n_bus(), 16, case.n_line(), 0);
    let rows = evaluate(Some(&model), &case, &data.scenarios, &EvalConfig::default()).unwrap();
    assert_eq!(rows.iter().map(|r| r.method).collect::<Vec<_>>(), Method::ALL.to_vec());
    let cost = |m: Method| rows.iter().find(|r| r.method == m).unwrap().avg_cost_k;
    let tol = 1e-6 * cost(Method::Dcopf);
    assert!(cost(Method::Ed) <= cost(Method::OtsExact) + tol);
    assert!(cost(Method::OtsExact) <= cost(Method::Dcopf) + tol);
    assert!((cost(Method::Dadnn) - cost(Method::Dcopf)).abs() <= tol);
    for r in &rows {
        assert_eq!(r.scenarios, 12);
        assert_eq!(r.infeasible, 0);
        if r.method != Method::Ed {
            assert_eq!(r.ineq_viol_pct, 0.0);
            assert_eq!(r.eq_viol_pct, 0.0);
        }
    }
}

#[test]
fn loose_limits_collapse_to_economic_dispatch() {
    let case = fixtures::mesh8();
    let data = dataset(&case, 6, 1.0, 1.1, 9);
    let model = init_network(case.n_bus(), 16, case.n_line(), 0);
    let rows = sweep_line_limits(Some(&model), &case, &data.scenarios, &[1.0, 100.0], &EvalConfig::default()).unwrap();
    let at = |s: f64, m: Method| rows.iter().find(|r| r.scale == s && r.method == m).unwrap().avg_cost_k;
    let ed = at(100.0, Method::Ed);
    for m in [Method::Dcopf, Method::OtsExact, Method::Dadnn] {
        assert!((at(100.0, m) - ed).abs() <= 1e-6 * ed, "{m}");
        assert!(at(100.0, m) <= at(1.0, m) + 1e-6 * ed);
    }
}

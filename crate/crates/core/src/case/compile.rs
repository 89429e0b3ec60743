use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::matpower::{branch_col, bus_col, cost_col, gen_col, RawCase, REF_BUS_TYPE};
use super::{CaseError, CostCoeffs, GridCase, Topology};

/// Per-unit rating substituted for MATPOWER's `RATE_A = 0` ("unlimited").
pub const UNLIMITED_FLOW_PU: f64 = 1e4;

/// Converts raw MATPOWER tables into the per-unit DC model.
///
/// Branch resistance, taps and phase shifts are ignored. Out-of-service
/// branches and generators are dropped. Nodal angle bounds are
/// `[-angle_limit, angle_limit]` at every bus except the reference bus,
/// which is pinned to zero.
pub fn compile_case(raw: &RawCase, angle_limit: f64) -> Result<GridCase, CaseError> {
    raw.validate()?;
    if !(angle_limit > 0.0) {
        return Err(CaseError::Data(format!(
            "angle limit must be positive, got {angle_limit}"
        )));
    }
    let base = raw.base_mva;

    let bus_ids: Vec<usize> = raw
        .bus
        .iter()
        .map(|row| row[bus_col::BUS_I] as usize)
        .collect();
    let index: HashMap<usize, usize> = bus_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    if index.len() != bus_ids.len() {
        return Err(CaseError::Data("duplicate bus numbers".into()));
    }
    let nb = bus_ids.len();
    let slack = raw
        .bus
        .iter()
        .position(|row| row[bus_col::BUS_TYPE] == REF_BUS_TYPE)
        .expect("validated");

    let base_demand = DVector::from_iterator(nb, raw.bus.iter().map(|row| row[bus_col::PD] / base));

    // generators
    let mut gen_bus = Vec::new();
    let mut pg_max = Vec::new();
    let mut pg_min = Vec::new();
    let mut cost = Vec::new();
    for (k, row) in raw.gen.iter().enumerate() {
        if row[gen_col::GEN_STATUS] <= 0.0 {
            continue;
        }
        let (lo, hi) = (row[gen_col::PMIN] / base, row[gen_col::PMAX] / base);
        if lo > hi {
            return Err(CaseError::Data(format!(
                "generator {}: Pmin {} exceeds Pmax {}",
                k + 1,
                row[gen_col::PMIN],
                row[gen_col::PMAX]
            )));
        }
        gen_bus.push(index[&(row[gen_col::GEN_BUS] as usize)]);
        pg_min.push(lo);
        pg_max.push(hi);
        cost.push(per_unit_cost(&raw.gencost[k], base, k + 1)?);
    }
    let ng = gen_bus.len();
    if ng == 0 {
        return Err(CaseError::Data("no in-service generators".into()));
    }
    let mut gen_incidence = DMatrix::zeros(nb, ng);
    for (g, &b) in gen_bus.iter().enumerate() {
        gen_incidence[(b, g)] = 1.0;
    }

    // branches
    let mut line_from = Vec::new();
    let mut line_to = Vec::new();
    let mut susceptance = Vec::new();
    let mut flow_max = Vec::new();
    for (k, row) in raw.branch.iter().enumerate() {
        if row[branch_col::BR_STATUS] <= 0.0 {
            continue;
        }
        let x = row[branch_col::BR_X];
        if !(x > 0.0) {
            return Err(CaseError::Data(format!(
                "branch {}: reactance must be positive, got {x}",
                k + 1
            )));
        }
        let f = index[&(row[branch_col::F_BUS] as usize)];
        let t = index[&(row[branch_col::T_BUS] as usize)];
        if f == t {
            return Err(CaseError::Data(format!("branch {} is a self loop", k + 1)));
        }
        let rate = row[branch_col::RATE_A];
        line_from.push(f);
        line_to.push(t);
        susceptance.push(1.0 / x);
        flow_max.push(if rate > 0.0 { rate / base } else { UNLIMITED_FLOW_PU });
    }
    let nl = line_from.len();
    let mut branch_incidence = DMatrix::zeros(nl, nb);
    for l in 0..nl {
        branch_incidence[(l, line_from[l])] = 1.0;
        branch_incidence[(l, line_to[l])] = -1.0;
    }

    let topo = Topology::new(nb, &line_from, &line_to);
    if let Some(bus) = topo.unreachable_from(slack, &vec![true; nl]).first() {
        return Err(CaseError::Disconnected(bus_ids[*bus]));
    }

    let theta_max = DVector::from_fn(nb, |i, _| if i == slack { 0.0 } else { angle_limit });
    let flow_max = DVector::from_vec(flow_max);
    Ok(GridCase {
        name: String::new(),
        base_mva: base,
        bus_ids,
        slack,
        line_from,
        line_to,
        gen_bus,
        gen_incidence,
        branch_incidence,
        susceptance: DVector::from_vec(susceptance),
        flow_min: -&flow_max,
        flow_max,
        pg_max: DVector::from_vec(pg_max),
        pg_min: DVector::from_vec(pg_min),
        theta_min: -&theta_max,
        theta_max,
        cost,
        base_demand,
    })
}

/// Polynomial gencost row to per-unit coefficients.
fn per_unit_cost(row: &[f64], base: f64, gen: usize) -> Result<CostCoeffs, CaseError> {
    if row[cost_col::MODEL] != 2.0 {
        return Err(CaseError::UnsupportedCost {
            gen,
            msg: format!("cost model {} is not polynomial (2)", row[cost_col::MODEL]),
        });
    }
    let n = row[cost_col::NCOST] as usize;
    if row.len() < cost_col::COST + n {
        return Err(CaseError::Data(format!(
            "gencost row {gen} declares {n} coefficients but has {}",
            row.len() - cost_col::COST
        )));
    }
    // highest order first
    let coeffs = &row[cost_col::COST..cost_col::COST + n];
    let degree_of = |i: usize| n - 1 - i;
    let mut c = [0.0; 3];
    for (i, &v) in coeffs.iter().enumerate() {
        let d = degree_of(i);
        if d > 2 {
            if v != 0.0 {
                return Err(CaseError::UnsupportedCost {
                    gen,
                    msg: format!("polynomial degree {d} > 2"),
                });
            }
            continue;
        }
        c[d] = v;
    }
    if c[2] < 0.0 {
        return Err(CaseError::UnsupportedCost {
            gen,
            msg: "negative quadratic coefficient makes the cost non-convex".into(),
        });
    }
    Ok(CostCoeffs {
        c2: c[2] * base * base,
        c1: c[1] * base,
        c0: c[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{fixtures, parse_matpower};

    #[test]
    fn triangle3_compiles() {
        let case = fixtures::triangle3();
        assert_eq!((case.n_bus(), case.n_gen(), case.n_line()), (3, 2, 3));
        // x = 0.1 p.u. -> b = 10 p.u.
        for b in case.susceptance.iter() {
            assert!((b - 10.0).abs() < 1e-12);
        }
        assert_eq!(case.flow_max.as_slice(), &[1.0, 1.0, 0.6]);
        assert_eq!(case.flow_min.as_slice(), &[-1.0, -1.0, -0.6]);
        assert_eq!(case.theta_max.as_slice(), &[0.0, 0.6, 0.6]);
        assert_eq!(case.theta_min.as_slice(), &[0.0, -0.6, -0.6]);
        assert_eq!(case.slack, 0);
        assert_eq!(case.base_demand.as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn raw_row_counts() {
        let raw = parse_matpower(fixtures::TRIANGLE3).unwrap();
        assert_eq!(
            (raw.bus.len(), raw.gen.len(), raw.branch.len(), raw.gencost.len()),
            (3, 2, 3, 2)
        );
    }

    #[test]
    fn linear_cost_converted_to_per_unit() {
        let case = fixtures::triangle3();
        // 10 $/MWh at 100 MVA base -> 1000 $/(p.u. h)
        assert_eq!(case.cost[0].c1, 1000.0);
        // evaluating at 50 MW both ways gives 500 $/h
        let per_unit = case.cost[0].eval(0.5);
        let in_mw = 10.0 * 50.0;
        assert!((per_unit - in_mw).abs() < 1e-9);
    }

    #[test]
    fn quadratic_cost_converted() {
        let row = [2.0, 0.0, 0.0, 3.0, 0.01, 20.0, 7.0];
        let c = per_unit_cost(&row, 100.0, 1).unwrap();
        let p_mw: f64 = 37.0;
        let direct = 0.01 * p_mw * p_mw + 20.0 * p_mw + 7.0;
        assert!((c.eval(p_mw / 100.0) - direct).abs() < 1e-9);
    }

    #[test]
    fn incidence_sanity() {
        for case in [fixtures::triangle3(), fixtures::pent5(), fixtures::mesh8()] {
            for row in case.branch_incidence.row_iter() {
                assert_eq!(row.sum(), 0.0);
            }
            for (b, row) in case.gen_incidence.row_iter().enumerate() {
                let at_bus = case.gen_bus.iter().filter(|&&g| g == b).count();
                assert_eq!(row.sum(), at_bus as f64);
            }
        }
    }

    #[test]
    fn nonpositive_reactance_rejected() {
        let text = fixtures::TRIANGLE3.replace("1\t2\t0\t0.1", "1\t2\t0\t0");
        let raw = parse_matpower(&text).unwrap();
        assert!(matches!(compile_case(&raw, 0.6), Err(CaseError::Data(_))));
    }

    #[test]
    fn disconnected_network_rejected() {
        // take lines 2-3 and 1-3 out of service: bus 3 is isolated
        let text = fixtures::TRIANGLE3
            .replace("2\t3\t0\t0.1\t0\t100\t100\t100\t0\t0\t1", "2\t3\t0\t0.1\t0\t100\t100\t100\t0\t0\t0")
            .replace("1\t3\t0\t0.1\t0\t60\t60\t60\t0\t0\t1", "1\t3\t0\t0.1\t0\t60\t60\t60\t0\t0\t0");
        let raw = parse_matpower(&text).unwrap();
        assert!(matches!(compile_case(&raw, 0.6), Err(CaseError::Disconnected(3))));
    }

    #[test]
    fn out_of_service_branch_dropped() {
        let text = fixtures::TRIANGLE3
            .replace("1\t3\t0\t0.1\t0\t60\t60\t60\t0\t0\t1", "1\t3\t0\t0.1\t0\t60\t60\t60\t0\t0\t0");
        let raw = parse_matpower(&text).unwrap();
        assert_eq!(compile_case(&raw, 0.6).unwrap().n_line(), 2);
    }

    #[test]
    fn cubic_cost_rejected() {
        let text = fixtures::TRIANGLE3.replace("2\t0\t0\t2\t10\t0;", "2\t0\t0\t4\t1\t0\t10\t0;\t");
        let text = text.replace("2\t0\t0\t2\t50\t0;", "2\t0\t0\t4\t0\t0\t50\t0;");
        let raw = parse_matpower(&text).unwrap();
        assert!(matches!(
            compile_case(&raw, 0.6),
            Err(CaseError::UnsupportedCost { gen: 1, .. })
        ));
    }

    #[test]
    fn piecewise_cost_rejected() {
        let text = fixtures::TRIANGLE3.replace("2\t0\t0\t2\t10\t0;", "1\t0\t0\t2\t0\t0;");
        let raw = parse_matpower(&text).unwrap();
        assert!(matches!(compile_case(&raw, 0.6), Err(CaseError::UnsupportedCost { .. })));
    }

    #[test]
    fn zero_rating_means_unlimited() {
        let text = fixtures::TRIANGLE3.replace("0.1\t0\t60\t60\t60", "0.1\t0\t0\t0\t0");
        let raw = parse_matpower(&text).unwrap();
        let case = compile_case(&raw, 0.6).unwrap();
        assert_eq!(case.flow_max[2], UNLIMITED_FLOW_PU);
    }

    #[test]
    fn angle_limit_must_be_positive() {
        let raw = parse_matpower(fixtures::TRIANGLE3).unwrap();
        assert!(compile_case(&raw, 0.0).is_err());
    }
}

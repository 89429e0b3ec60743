use std::time::Instant;

use rayon::prelude::*;

use super::{prefer, OtsError, OtsOptimality, OtsResult, MAX_ENUMERATED_LINES};
use crate::case::{GridCase, Topology};
use crate::dcopf::{solve_dcopf_with, OpfOptions, SwitchVector};

/// Brute-force OTS over every open/closed assignment of `switchable`
/// (all lines when `None`); other lines stay closed. Assignments that cut a
/// loaded bus off from the reference bus are skipped without solving.
pub fn enumerate_ots(
    case: &GridCase,
    pd: &[f64],
    switchable: Option<&[usize]>,
    options: &OpfOptions,
) -> Result<OtsResult, OtsError> {
    let start = Instant::now();
    let all: Vec<usize> = (0..case.n_line()).collect();
    let lines = switchable.unwrap_or(&all);
    if lines.len() > MAX_ENUMERATED_LINES {
        return Err(OtsError::TooManySwitchable(lines.len()));
    }
    if let Some(&bad) = lines.iter().find(|&&l| l >= case.n_line()) {
        return Err(OtsError::Option(format!("line {bad} does not exist")));
    }
    let topo = Topology::of(case);

    let solved: Vec<Option<(SwitchVector, crate::dcopf::Dispatch)>> = (0u64..1 << lines.len())
        .into_par_iter()
        .map(|mask| {
            let mut closed = vec![true; case.n_line()];
            for (bit, &l) in lines.iter().enumerate() {
                closed[l] = mask & (1 << bit) == 0;
            }
            if !topo.serves_all_load(case.slack, &closed, pd) {
                return Ok(None);
            }
            let z = SwitchVector::binary(&closed);
            let d = solve_dcopf_with(case, pd, &z, options)?;
            Ok(Some((z, d)))
        })
        .collect::<Result<_, OtsError>>()?;

    let work = solved.iter().filter(|s| s.is_some()).count();
    let mut best: Option<(SwitchVector, crate::dcopf::Dispatch)> = None;
    for (z, d) in solved.into_iter().flatten().filter(|(_, d)| d.is_optimal()) {
        let better = match &best {
            None => true,
            Some((bz, bd)) => prefer(d.cost, &z, bd.cost, bz),
        };
        if better {
            best = Some((z, d));
        }
    }
    let (z, d) = best.ok_or(OtsError::Infeasible)?;
    let objective = d.cost;
    Ok(OtsResult {
        z_star: z,
        dispatch: d,
        objective,
        optimality: OtsOptimality::Proved,
        bound: objective,
        incumbent_trace: vec![(start.elapsed().as_secs_f64(), objective)],
        work,
    })
}

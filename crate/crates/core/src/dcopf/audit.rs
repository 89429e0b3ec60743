use serde::Serialize;

use super::{DcopfError, Dispatch, SwitchMode, SwitchVector};
use crate::case::GridCase;

/// Constraint residuals of a dispatch recomputed from raw case data.
/// All magnitudes are per unit (radians for angles).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationReport {
    pub max_eq_violation: f64,
    pub max_ineq_violation: f64,
    pub violated: bool,
    pub balance: f64,
    pub line: f64,
    pub gen: f64,
    pub angle: f64,
    /// Signed nodal mismatch `M pg - pd - C' f` per bus.
    pub bus_mismatch: Vec<f64>,
}

/// Audits `dispatch` against the network under binary line states `z`.
/// Flows are recomputed as `z b C theta`; open lines carry nothing and their
/// ratings are ignored.
pub fn check_feasibility(
    case: &GridCase,
    pd: &[f64],
    z: &SwitchVector,
    dispatch: &Dispatch,
    audit_tol: f64,
) -> Result<ViolationReport, DcopfError> {
    if z.mode() != SwitchMode::Binary {
        return Err(DcopfError::Switch("feasibility audit needs a binary switch vector".into()));
    }
    if pd.len() != case.n_bus() || z.len() != case.n_line() || dispatch.pg.len() != case.n_gen() || dispatch.theta.len() != case.n_bus() {
        return Err(DcopfError::Dimension("audit inputs do not match the case".into()));
    }
    let flows = dispatch.flows(case, z);

    let mut mismatch: Vec<f64> = pd.iter().map(|d| -d).collect();
    for (g, &bus) in case.gen_bus.iter().enumerate() {
        mismatch[bus] += dispatch.pg[g];
    }
    for (l, f) in flows.iter().enumerate() {
        mismatch[case.line_from[l]] -= f;
        mismatch[case.line_to[l]] += f;
    }
    let balance = mismatch.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    let line = flows
        .iter()
        .enumerate()
        .filter(|(l, _)| z.values()[*l] == 1.0)
        .map(|(l, &f)| (f - case.flow_max[l]).max(case.flow_min[l] - f))
        .fold(0.0f64, f64::max);
    let gen = dispatch
        .pg
        .iter()
        .enumerate()
        .map(|(g, &p)| (p - case.pg_max[g]).max(case.pg_min[g] - p))
        .fold(0.0f64, f64::max);
    let angle = dispatch
        .theta
        .iter()
        .enumerate()
        .map(|(b, &t)| (t - case.theta_max[b]).max(case.theta_min[b] - t))
        .fold(0.0f64, f64::max);

    let max_ineq = line.max(gen).max(angle);
    Ok(ViolationReport {
        max_eq_violation: balance,
        max_ineq_violation: max_ineq,
        violated: balance > audit_tol || max_ineq > audit_tol,
        balance,
        line,
        gen,
        angle,
        bus_mismatch: mismatch,
    })
}

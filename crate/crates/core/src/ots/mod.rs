//! Exact optimal transmission switching: exhaustive enumeration and a
//! big-M branch-and-bound.

mod bnb;
mod enumerate;

use serde::Serialize;
use thiserror::Error;

use crate::dcopf::{DcopfError, Dispatch, SwitchVector};

pub use bnb::{branch_and_bound_ots, BnbOptions};
pub use enumerate::enumerate_ots;

/// Largest switchable subset accepted by [`enumerate_ots`].
pub const MAX_ENUMERATED_LINES: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum OtsError {
    #[error("no feasible topology")]
    Infeasible,
    #[error("time limit reached before any feasible topology was found")]
    NoIncumbent,
    #[error("{0} switchable lines exceed the enumeration limit of {MAX_ENUMERATED_LINES}")]
    TooManySwitchable(usize),
    #[error("invalid option: {0}")]
    Option(String),
    #[error(transparent)]
    Dcopf(#[from] DcopfError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OtsOptimality {
    Proved,
    GapLimited,
    TimeLimited,
}

#[derive(Debug, Clone, Serialize)]
pub struct OtsResult {
    pub z_star: SwitchVector,
    pub dispatch: Dispatch,
    /// Generation cost in $/h.
    pub objective: f64,
    pub optimality: OtsOptimality,
    /// Best proven lower bound in $/h.
    pub bound: f64,
    /// `(elapsed seconds, incumbent cost)` at each improvement.
    pub incumbent_trace: Vec<(f64, f64)>,
    /// Topologies solved (enumeration) or nodes processed (branch-and-bound).
    pub work: usize,
}

impl OtsResult {
    /// Writes the incumbent trace as `elapsed_s,cost` CSV.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("elapsed_s,cost\n");
        for (t, c) in &self.incumbent_trace {
            out.push_str(&format!("{t},{c}\n"));
        }
        out
    }
}

/// True when two costs are equal up to solver accuracy.
pub(crate) fn costs_tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-8 * a.abs().max(b.abs()).max(1.0)
}

/// Preference order among feasible topologies: lower cost, then more
/// closed lines, then the lexicographically smallest set of open lines.
pub(crate) fn prefer(a_cost: f64, a: &SwitchVector, b_cost: f64, b: &SwitchVector) -> bool {
    if !costs_tie(a_cost, b_cost) {
        return a_cost < b_cost;
    }
    let (oa, ob) = (a.open_lines(), b.open_lines());
    if oa.len() != ob.len() {
        return oa.len() < ob.len();
    }
    oa < ob
}

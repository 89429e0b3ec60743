//! Best-first branch-and-bound on the big-M DC-OTS formulation.
//!
//! For an undecided line `l` the node relaxation carries a flow variable
//! `f_l` and a switch variable `z_l in [0, 1]` with
//!
//! ```text
//!   p_min z_l <= f_l <= p_max z_l
//!   |f_l - b_l (theta_from - theta_to)| <= M_l (1 - z_l)
//! ```
//!
//! Lines fixed closed use `b_l C theta` directly; lines fixed open vanish.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use super::{costs_tie, prefer, OtsError, OtsOptimality, OtsResult};
use crate::case::{GridCase, Topology};
use crate::dcopf::{flow_row, solve_dcopf_with, Dispatch, OpfIndex, OpfOptions, SwitchVector};
use crate::qp::{solve_qp, QpProblem, QpStatus};

const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnbOptions {
    /// Relative optimality gap at which the search stops.
    pub mip_gap: f64,
    pub time_limit: Duration,
    pub opf: OpfOptions,
}

impl Default for BnbOptions {
    fn default() -> Self {
        Self {
            mip_gap: 1e-5,
            time_limit: Duration::from_secs(60),
            opf: OpfOptions::default(),
        }
    }
}

struct Node {
    bound: f64,
    seq: usize,
    fixed: Vec<Option<bool>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smallest bound first, then oldest node
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Incumbent {
    z: SwitchVector,
    dispatch: Dispatch,
}

struct Search<'a> {
    case: &'a GridCase,
    pd: &'a [f64],
    options: &'a BnbOptions,
    topo: Topology,
    big_m: Vec<f64>,
    start: Instant,
    incumbent: Option<Incumbent>,
    trace: Vec<(f64, f64)>,
}

impl Search<'_> {
    fn offer(&mut self, closed: &[bool]) -> Result<(), OtsError> {
        if !self.topo.serves_all_load(self.case.slack, closed, self.pd) {
            return Ok(());
        }
        let z = SwitchVector::binary(closed);
        let d = solve_dcopf_with(self.case, self.pd, &z, &self.options.opf)?;
        if !d.is_optimal() {
            return Ok(());
        }
        let better = match &self.incumbent {
            None => true,
            Some(inc) => prefer(d.cost, &z, inc.dispatch.cost, &inc.z),
        };
        if better {
            let improved = self
                .incumbent
                .as_ref()
                .is_none_or(|inc| d.cost < inc.dispatch.cost && !costs_tie(d.cost, inc.dispatch.cost));
            if improved {
                self.trace.push((self.start.elapsed().as_secs_f64(), d.cost));
            }
            self.incumbent = Some(Incumbent { z, dispatch: d });
        }
        Ok(())
    }

    fn upper(&self) -> f64 {
        self.incumbent
            .as_ref()
            .map_or(f64::INFINITY, |i| i.dispatch.cost)
    }

    fn gap(&self, bound: f64) -> f64 {
        let ub = self.upper();
        if !ub.is_finite() {
            return f64::INFINITY;
        }
        ((ub - bound) / ub.abs().max(1e-9)).max(0.0)
    }

    /// Solves the node relaxation. Returns `None` when infeasible, else the
    /// objective and the relaxed value of every line state.
    fn relax(&self, fixed: &[Option<bool>]) -> Result<Option<(f64, Vec<f64>)>, OtsError> {
        let case = self.case;
        let index = OpfIndex::for_case(case);
        let (ng, nb, nl) = (case.n_gen(), case.n_bus(), case.n_line());
        let free: Vec<usize> = (0..nl).filter(|&l| fixed[l].is_none()).collect();
        let base = index.n_var();
        let n = base + 2 * free.len();
        let f_col = |k: usize| base + 2 * k;
        let z_col = |k: usize| base + 2 * k + 1;

        let mut quad = DMatrix::zeros(n, n);
        let mut lin = DVector::zeros(n);
        for (g, c) in case.cost.iter().enumerate() {
            quad[(g, g)] = 2.0 * c.c2;
            lin[g] = c.c1;
        }

        let mut a = DMatrix::zeros(nb, n);
        a.view_mut((0, 0), (nb, ng)).copy_from(&case.gen_incidence);
        let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        let mut k = 0;
        for l in 0..nl {
            let (from, to) = (case.line_from[l], case.line_to[l]);
            let flow = flow_row(case, &index, l);
            match fixed[l] {
                Some(false) => {}
                Some(true) => {
                    for &(c, v) in &flow {
                        a[(from, c)] -= v;
                        a[(to, c)] += v;
                    }
                    rows.push((flow.clone(), case.flow_max[l]));
                    rows.push((flow.iter().map(|&(c, v)| (c, -v)).collect(), -case.flow_min[l]));
                }
                None => {
                    let (fc, zc) = (f_col(k), z_col(k));
                    a[(from, fc)] -= 1.0;
                    a[(to, fc)] += 1.0;
                    rows.push((vec![(fc, 1.0), (zc, -case.flow_max[l])], 0.0));
                    rows.push((vec![(fc, -1.0), (zc, case.flow_min[l])], 0.0));
                    let m = self.big_m[l];
                    let mut r: Vec<(usize, f64)> = vec![(fc, 1.0), (zc, m)];
                    r.extend(flow.iter().map(|&(c, v)| (c, -v)));
                    rows.push((r, m));
                    let mut r: Vec<(usize, f64)> = vec![(fc, -1.0), (zc, m)];
                    r.extend(flow.iter().copied());
                    rows.push((r, m));
                    rows.push((vec![(zc, 1.0)], 1.0));
                    rows.push((vec![(zc, -1.0)], 0.0));
                    k += 1;
                }
            }
        }
        for g in 0..ng {
            rows.push((vec![(g, 1.0)], case.pg_max[g]));
            rows.push((vec![(g, -1.0)], -case.pg_min[g]));
        }
        for b in 0..nb {
            if let Some(c) = index.theta_col[b] {
                rows.push((vec![(c, 1.0)], case.theta_max[b]));
                rows.push((vec![(c, -1.0)], -case.theta_min[b]));
            }
        }
        let mut g = DMatrix::zeros(rows.len(), n);
        let mut h = DVector::zeros(rows.len());
        for (r, (row, rhs)) in rows.iter().enumerate() {
            for &(c, v) in row {
                g[(r, c)] += v;
            }
            h[r] = *rhs;
        }
        let mut qp = QpProblem::new(quad, lin, a, DVector::from_column_slice(self.pd), g, h)
            .map_err(crate::dcopf::DcopfError::from)?;
        qp.offset = case.cost.iter().map(|c| c.c0).sum();
        let sol = solve_qp(&qp, &self.options.opf.qp).map_err(crate::dcopf::DcopfError::from)?;
        match sol.status {
            QpStatus::Optimal => {
                let mut zs: Vec<f64> = fixed.iter().map(|f| f.map_or(f64::NAN, |c| if c { 1.0 } else { 0.0 })).collect();
                for (k, &l) in free.iter().enumerate() {
                    zs[l] = sol.x[z_col(k)].clamp(0.0, 1.0);
                }
                Ok(Some((qp.objective(&sol.x), zs)))
            }
            QpStatus::Infeasible => Ok(None),
            QpStatus::NumericalFailure => {
                log::warn!("node relaxation failed numerically; branching without a bound");
                Ok(Some((f64::NEG_INFINITY, fixed.iter().map(|f| f.map_or(0.5, |c| if c { 1.0 } else { 0.0 })).collect())))
            }
        }
    }
}

/// Exact DC-OTS by best-first branch-and-bound. The all-closed DC-OPF seeds
/// the incumbent; every node also tries its rounded relaxation as a
/// heuristic topology.
pub fn branch_and_bound_ots(case: &GridCase, pd: &[f64], options: &BnbOptions) -> Result<OtsResult, OtsError> {
    if !(options.mip_gap > 0.0 && options.mip_gap <= 1.0) {
        return Err(OtsError::Option(format!("mip_gap must lie in (0, 1], got {}", options.mip_gap)));
    }
    if options.time_limit.is_zero() {
        return Err(OtsError::Option("time_limit must be positive".into()));
    }
    if pd.len() != case.n_bus() {
        return Err(crate::dcopf::DcopfError::Dimension("demand length must equal N_b".into()).into());
    }
    let nl = case.n_line();
    let big_m = (0..nl)
        .map(|l| {
            let (f, t) = (case.line_from[l], case.line_to[l]);
            let span = (case.theta_max[f] - case.theta_min[t]).max(case.theta_max[t] - case.theta_min[f]);
            case.susceptance[l] * span
        })
        .collect();
    let mut s = Search {
        case,
        pd,
        options,
        topo: Topology::of(case),
        big_m,
        start: Instant::now(),
        incumbent: None,
        trace: Vec::new(),
    };
    s.offer(&vec![true; nl])?;

    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        seq,
        fixed: vec![None; nl],
    });
    let mut nodes = 0;
    // smallest bound among nodes fathomed by the gap test
    let mut fathomed = f64::INFINITY;
    let (optimality, bound) = loop {
        let Some(node) = heap.peek() else {
            let bound = fathomed.min(s.upper());
            let status = if s.gap(bound) <= 1e-9 { OtsOptimality::Proved } else { OtsOptimality::GapLimited };
            break (status, bound);
        };
        let gap = s.gap(node.bound);
        if gap <= options.mip_gap {
            let bound = node.bound.min(fathomed);
            let status = if s.gap(bound) <= 1e-9 { OtsOptimality::Proved } else { OtsOptimality::GapLimited };
            break (status, bound);
        }
        if s.start.elapsed() >= options.time_limit {
            break (OtsOptimality::TimeLimited, node.bound.min(fathomed));
        }
        let node = heap.pop().expect("peeked");
        nodes += 1;

        let possibly_closed: Vec<bool> = node.fixed.iter().map(|f| *f != Some(false)).collect();
        if !s.topo.serves_all_load(case.slack, &possibly_closed, pd) {
            continue;
        }
        let Some((lb, zs)) = s.relax(&node.fixed)? else {
            continue;
        };
        let lb = lb.max(node.bound);
        if s.gap(lb) <= options.mip_gap {
            fathomed = fathomed.min(lb);
            continue;
        }
        let integral = zs
            .iter()
            .all(|&v| v.is_finite() && (v < INTEGRALITY_TOL || v > 1.0 - INTEGRALITY_TOL));
        let rounded: Vec<bool> = zs.iter().map(|&v| v >= 0.5).collect();
        s.offer(&rounded)?;
        if integral {
            continue;
        }
        let branch = (0..nl)
            .filter(|&l| node.fixed[l].is_none())
            .min_by(|&a, &b| (zs[a] - 0.5).abs().total_cmp(&(zs[b] - 0.5).abs()))
            .expect("fractional node has a free line");
        for value in [false, true] {
            let mut fixed = node.fixed.clone();
            fixed[branch] = Some(value);
            seq += 1;
            heap.push(Node { bound: lb, seq, fixed });
        }
    };

    let Some(inc) = s.incumbent else {
        return Err(if optimality == OtsOptimality::TimeLimited {
            OtsError::NoIncumbent
        } else {
            OtsError::Infeasible
        });
    };
    let objective = inc.dispatch.cost;
    Ok(OtsResult {
        z_star: inc.z,
        dispatch: inc.dispatch,
        objective,
        optimality,
        bound: bound.min(objective),
        incumbent_trace: s.trace,
        work: nodes,
    })
}

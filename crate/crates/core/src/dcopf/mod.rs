//! z-parameterized DC optimal power flow, economic dispatch and the
//! independent constraint audit.
//!
//! Decision vector `x = (pg, theta_nonslack)`. Every bus contributes one
//! balance row
//!
//! ```text
//!   M pg - C' diag(z . b) C theta = pd
//! ```
//!
//! and inequality rows come in the fixed order: line upper/lower pairs,
//! generator upper/lower pairs, angle upper/lower pairs (non-slack buses).

mod audit;
mod switch;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::GridCase;
use crate::qp::{solve_qp, QpError, QpProblem, QpSettings, QpSolution, QpStatus};

pub use audit::{check_feasibility, ViolationReport};
pub use switch::{SwitchMode, SwitchVector};

#[derive(Debug, Error, PartialEq)]
pub enum DcopfError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("switch vector: {0}")]
    Switch(String),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// How relaxed line states enter the flow-limit rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitScaling {
    /// `z p_min <= z b C theta <= z p_max`: both sides scaled.
    #[default]
    Scaled,
    /// `p_min <= z b C theta <= p_max`: limits kept at their ratings.
    Unscaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OpfOptions {
    pub limit_scaling: LimitScaling,
    pub qp: QpSettings,
}

/// What an inequality row constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    LineUpper(usize),
    LineLower(usize),
    GenUpper(usize),
    GenLower(usize),
    AngleUpper(usize),
    AngleLower(usize),
}

/// Column and row bookkeeping for a built OPF.
#[derive(Debug, Clone, PartialEq)]
pub struct OpfIndex {
    pub n_gen: usize,
    pub n_bus: usize,
    pub slack: usize,
    /// Column of each bus angle, `None` at the reference bus.
    pub theta_col: Vec<Option<usize>>,
    pub ineq_rows: Vec<RowKind>,
    /// `(upper, lower)` limit rows per line; `None` for lines dropped in
    /// binary mode.
    pub line_rows: Vec<Option<(usize, usize)>>,
}

impl OpfIndex {
    pub(crate) fn for_case(case: &GridCase) -> Self {
        let mut theta_col = vec![None; case.n_bus()];
        let mut next = case.n_gen();
        for (b, col) in theta_col.iter_mut().enumerate() {
            if b != case.slack {
                *col = Some(next);
                next += 1;
            }
        }
        Self {
            n_gen: case.n_gen(),
            n_bus: case.n_bus(),
            slack: case.slack,
            theta_col,
            ineq_rows: Vec::new(),
            line_rows: vec![None; case.n_line()],
        }
    }

    pub fn n_var(&self) -> usize {
        self.n_gen + self.n_bus - 1
    }

    /// Full angle vector (reference bus at zero) from a decision vector.
    pub fn theta(&self, x: &DVector<f64>) -> Vec<f64> {
        self.theta_col
            .iter()
            .map(|c| c.map_or(0.0, |c| x[c]))
            .collect()
    }

    pub fn pg(&self, x: &DVector<f64>) -> Vec<f64> {
        x.rows(0, self.n_gen).iter().copied().collect()
    }
}

/// A built OPF: the QP plus everything needed to interpret and
/// differentiate it.
#[derive(Debug, Clone)]
pub struct OpfProblem {
    pub qp: QpProblem,
    pub index: OpfIndex,
    pub z: SwitchVector,
    pub limit_scaling: LimitScaling,
}

/// Reduced flow operator row of line `l`: `b_l (theta_from - theta_to)` in
/// decision-vector columns.
pub(crate) fn flow_row(case: &GridCase, index: &OpfIndex, l: usize) -> Vec<(usize, f64)> {
    let b = case.susceptance[l];
    let mut out = Vec::with_capacity(2);
    if let Some(c) = index.theta_col[case.line_from[l]] {
        out.push((c, b));
    }
    if let Some(c) = index.theta_col[case.line_to[l]] {
        out.push((c, -b));
    }
    out
}

fn check_dims(case: &GridCase, pd: &[f64], z: &SwitchVector) -> Result<(), DcopfError> {
    if pd.len() != case.n_bus() {
        return Err(DcopfError::Dimension(format!(
            "demand has {} entries, case has {} buses",
            pd.len(),
            case.n_bus()
        )));
    }
    if z.len() != case.n_line() {
        return Err(DcopfError::Dimension(format!(
            "switch vector has {} entries, case has {} lines",
            z.len(),
            case.n_line()
        )));
    }
    Ok(())
}

/// Builds the DC-OPF QP for demand `pd` (per unit) under line states `z`.
pub fn build_opf(
    case: &GridCase,
    pd: &[f64],
    z: &SwitchVector,
    limit_scaling: LimitScaling,
) -> Result<OpfProblem, DcopfError> {
    check_dims(case, pd, z)?;
    let mut index = OpfIndex::for_case(case);
    let n = index.n_var();
    let (ng, nb, nl) = (case.n_gen(), case.n_bus(), case.n_line());

    let mut quad = DMatrix::zeros(n, n);
    let mut lin = DVector::zeros(n);
    let mut offset = 0.0;
    for (g, c) in case.cost.iter().enumerate() {
        quad[(g, g)] = 2.0 * c.c2;
        lin[g] = c.c1;
        offset += c.c0;
    }

    let mut a = DMatrix::zeros(nb, n);
    a.view_mut((0, 0), (nb, ng)).copy_from(&case.gen_incidence);
    for l in 0..nl {
        let zl = z.values()[l];
        if zl == 0.0 {
            continue;
        }
        let (f, t) = (case.line_from[l], case.line_to[l]);
        for (col, coef) in flow_row(case, &index, l) {
            // bus f injects the flow, bus t absorbs it
            a[(f, col)] -= zl * coef;
            a[(t, col)] += zl * coef;
        }
    }
    let b = DVector::from_column_slice(pd);

    let mut g_rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut h = Vec::new();
    for l in 0..nl {
        let zl = z.values()[l];
        if z.mode() == SwitchMode::Binary && zl == 0.0 {
            continue;
        }
        let row = flow_row(case, &index, l);
        let (hi, lo) = match limit_scaling {
            LimitScaling::Scaled => (zl * case.flow_max[l], zl * case.flow_min[l]),
            LimitScaling::Unscaled => (case.flow_max[l], case.flow_min[l]),
        };
        let upper = g_rows.len();
        g_rows.push(row.iter().map(|&(c, v)| (c, zl * v)).collect());
        h.push(hi);
        index.ineq_rows.push(RowKind::LineUpper(l));
        g_rows.push(row.iter().map(|&(c, v)| (c, -zl * v)).collect());
        h.push(-lo);
        index.ineq_rows.push(RowKind::LineLower(l));
        index.line_rows[l] = Some((upper, upper + 1));
    }
    for gen in 0..ng {
        g_rows.push(vec![(gen, 1.0)]);
        h.push(case.pg_max[gen]);
        index.ineq_rows.push(RowKind::GenUpper(gen));
        g_rows.push(vec![(gen, -1.0)]);
        h.push(-case.pg_min[gen]);
        index.ineq_rows.push(RowKind::GenLower(gen));
    }
    for bus in 0..nb {
        let Some(col) = index.theta_col[bus] else { continue };
        g_rows.push(vec![(col, 1.0)]);
        h.push(case.theta_max[bus]);
        index.ineq_rows.push(RowKind::AngleUpper(bus));
        g_rows.push(vec![(col, -1.0)]);
        h.push(-case.theta_min[bus]);
        index.ineq_rows.push(RowKind::AngleLower(bus));
    }
    let mut g = DMatrix::zeros(g_rows.len(), n);
    for (r, row) in g_rows.iter().enumerate() {
        for &(c, v) in row {
            g[(r, c)] += v;
        }
    }

    let mut qp = QpProblem::new(quad, lin, a, b, g, DVector::from_vec(h))?;
    qp.offset = offset;
    Ok(OpfProblem {
        qp,
        index,
        z: z.clone(),
        limit_scaling,
    })
}

/// Result of one OPF or ED solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dispatch {
    /// Per-unit generator outputs.
    pub pg: Vec<f64>,
    /// Bus angles in radians, reference bus at zero. All zeros for economic
    /// dispatch, where `theta_applicable` is false.
    pub theta: Vec<f64>,
    pub theta_applicable: bool,
    /// Generation cost in $/h recomputed from `pg`.
    pub cost: f64,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl Dispatch {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    /// Line flows `z b C theta` under `z`.
    pub fn flows(&self, case: &GridCase, z: &SwitchVector) -> Vec<f64> {
        (0..case.n_line())
            .map(|l| {
                z.values()[l]
                    * case.susceptance[l]
                    * (self.theta[case.line_from[l]] - self.theta[case.line_to[l]])
            })
            .collect()
    }
}

impl OpfProblem {
    pub fn solve(&self, case: &GridCase, settings: &QpSettings) -> Result<(QpSolution, Dispatch), DcopfError> {
        let sol = solve_qp(&self.qp, settings)?;
        let pg = self.index.pg(&sol.x);
        let dispatch = Dispatch {
            cost: case.generation_cost(&pg),
            pg,
            theta: self.index.theta(&sol.x),
            theta_applicable: true,
            lambda: sol.lambda.iter().copied().collect(),
            mu: sol.mu.iter().copied().collect(),
            status: sol.status,
            kkt_residual: sol.kkt_residual,
            iterations: sol.iterations,
        };
        Ok((sol, dispatch))
    }
}

/// DC-OPF under line states `z` with default options.
pub fn solve_dcopf(case: &GridCase, pd: &[f64], z: &SwitchVector) -> Result<Dispatch, DcopfError> {
    solve_dcopf_with(case, pd, z, &OpfOptions::default())
}

pub fn solve_dcopf_with(
    case: &GridCase,
    pd: &[f64],
    z: &SwitchVector,
    options: &OpfOptions,
) -> Result<Dispatch, DcopfError> {
    let problem = build_opf(case, pd, z, options.limit_scaling)?;
    Ok(problem.solve(case, &options.qp)?.1)
}

/// Economic dispatch: aggregate balance and generator bounds only.
pub fn solve_ed(case: &GridCase, pd: &[f64], settings: &QpSettings) -> Result<Dispatch, DcopfError> {
    if pd.len() != case.n_bus() {
        return Err(DcopfError::Dimension(format!(
            "demand has {} entries, case has {} buses",
            pd.len(),
            case.n_bus()
        )));
    }
    let ng = case.n_gen();
    let quad = DMatrix::from_diagonal(&DVector::from_iterator(ng, case.cost.iter().map(|c| 2.0 * c.c2)));
    let lin = DVector::from_iterator(ng, case.cost.iter().map(|c| c.c1));
    let a = DMatrix::from_element(1, ng, 1.0);
    let b = DVector::from_element(1, pd.iter().sum::<f64>());
    let mut g = DMatrix::zeros(2 * ng, ng);
    let mut h = DVector::zeros(2 * ng);
    for gen in 0..ng {
        g[(2 * gen, gen)] = 1.0;
        h[2 * gen] = case.pg_max[gen];
        g[(2 * gen + 1, gen)] = -1.0;
        h[2 * gen + 1] = -case.pg_min[gen];
    }
    let mut qp = QpProblem::new(quad, lin, a, b, g, h)?;
    qp.offset = case.cost.iter().map(|c| c.c0).sum();

    let total = pd.iter().sum::<f64>();
    let (lo, hi) = (case.pg_min.sum(), case.pg_max.sum());
    let sol = if total < lo || total > hi {
        None
    } else {
        Some(solve_qp(&qp, settings)?)
    };
    let pg: Vec<f64> = sol
        .as_ref()
        .map_or_else(|| vec![0.0; ng], |s| s.x.iter().copied().collect());
    Ok(Dispatch {
        cost: case.generation_cost(&pg),
        pg,
        theta: vec![0.0; case.n_bus()],
        theta_applicable: false,
        lambda: sol.as_ref().map_or_else(|| vec![0.0], |s| s.lambda.iter().copied().collect()),
        mu: sol.as_ref().map_or_else(|| vec![0.0; 2 * ng], |s| s.mu.iter().copied().collect()),
        status: sol.as_ref().map_or(QpStatus::Infeasible, |s| s.status),
        kkt_residual: sol.as_ref().map_or(f64::INFINITY, |s| s.kkt_residual),
        iterations: sol.as_ref().map_or(0, |s| s.iterations),
    })
}

/// Total generation cost in $/h.
pub fn generation_cost(case: &GridCase, pg: &[f64]) -> f64 {
    case.generation_cost(pg)
}

//! Sensitivity of the relaxed DC-OPF solution to the line states by
//! implicit differentiation of the KKT conditions in complementarity form:
//!
//! ```text
//!   Q x + q + A(z)' lambda + G(z)' mu = 0
//!   A(z) x - b                        = 0
//!   diag(mu) (G(z) x - h(z))          = 0
//! ```

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::case::GridCase;
use crate::dcopf::{build_opf, DcopfError, Dispatch, LimitScaling, OpfOptions, OpfProblem, SwitchVector};
use crate::linalg::condition_estimate_1;
use crate::qp::QpSolution;

/// Condition estimate above which the Tikhonov fallback is used.
pub const CONDITION_LIMIT: f64 = 1e12;
pub const TIKHONOV_SHIFT: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum DiffError {
    #[error("solution is not optimal")]
    NotOptimal,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("sensitivity system singular even after regularization")]
    SensitivityFailure,
    #[error("finite-difference step must be positive and keep z inside [0, 1]")]
    Step,
    #[error(transparent)]
    Dcopf(#[from] DcopfError),
}

/// Differentiated KKT system. Rows and columns are ordered
/// `[stationarity (n); equality (m_e); complementarity (m_i)]` and
/// `[x; lambda; mu]`.
#[derive(Debug, Clone)]
pub struct KktSystem {
    pub jx: DMatrix<f64>,
    pub jz: DMatrix<f64>,
    pub n: usize,
    pub m_e: usize,
    pub m_i: usize,
    pub n_line: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityResult {
    /// `d(pg, theta_nonslack) / dz`, `n x N_l`.
    pub dx_dz: DMatrix<f64>,
    pub condition_estimate: f64,
    pub regularized: bool,
}

/// Residual of the complementarity-form KKT map at a solution.
pub fn kkt_map(problem: &OpfProblem, sol: &QpSolution) -> DVector<f64> {
    let qp = &problem.qp;
    let (n, m_e, m_i) = (qp.n_var(), qp.n_eq(), qp.n_ineq());
    let mut r = DVector::zeros(n + m_e + m_i);
    r.rows_mut(0, n)
        .copy_from(&(&qp.quad * &sol.x + &qp.lin + qp.a_eq.tr_mul(&sol.lambda) + qp.g_ineq.tr_mul(&sol.mu)));
    r.rows_mut(n, m_e).copy_from(&(&qp.a_eq * &sol.x - &qp.b_eq));
    r.rows_mut(n + m_e, m_i)
        .copy_from(&sol.mu.component_mul(&(&qp.g_ineq * &sol.x - &qp.h_ineq)));
    r
}

/// Assembles `J_x = dI/d(x, lambda, mu)` and `J_z = dI/dz` at an optimal
/// solution of `problem`.
pub fn build_kkt_jacobians(case: &GridCase, problem: &OpfProblem, sol: &QpSolution) -> Result<KktSystem, DiffError> {
    if !sol.is_optimal() {
        return Err(DiffError::NotOptimal);
    }
    let qp = &problem.qp;
    let idx = &problem.index;
    let (n, m_e, m_i, nl) = (qp.n_var(), qp.n_eq(), qp.n_ineq(), case.n_line());
    if sol.x.len() != n || sol.lambda.len() != m_e || sol.mu.len() != m_i {
        return Err(DiffError::Dimension("solution does not match the problem".into()));
    }

    let dim = n + m_e + m_i;
    let mut jx = DMatrix::zeros(dim, dim);
    jx.view_mut((0, 0), (n, n)).copy_from(&qp.quad);
    jx.view_mut((0, n), (n, m_e)).copy_from(&qp.a_eq.transpose());
    jx.view_mut((0, n + m_e), (n, m_i)).copy_from(&qp.g_ineq.transpose());
    jx.view_mut((n, 0), (m_e, n)).copy_from(&qp.a_eq);
    let slack = &qp.g_ineq * &sol.x - &qp.h_ineq;
    for i in 0..m_i {
        for c in 0..n {
            jx[(n + m_e + i, c)] = sol.mu[i] * qp.g_ineq[(i, c)];
        }
        jx[(n + m_e + i, n + m_e + i)] = slack[i];
    }

    let mut jz = DMatrix::zeros(dim, nl);
    for l in 0..nl {
        let (f, t) = (case.line_from[l], case.line_to[l]);
        let row = crate::dcopf::flow_row(case, idx, l);
        let flow: f64 = row.iter().map(|&(c, v)| v * sol.x[c]).sum();

        // balance rows: A[f, c] = -z v, A[t, c] = +z v
        for &(c, v) in &row {
            jz[(c, l)] += -v * sol.lambda[f] + v * sol.lambda[t];
        }
        jz[(n + f, l)] -= flow;
        jz[(n + t, l)] += flow;

        if let Some((up, lo)) = idx.line_rows[l] {
            let (mu_u, mu_l) = (sol.mu[up], sol.mu[lo]);
            for &(c, v) in &row {
                jz[(c, l)] += v * (mu_u - mu_l);
            }
            let (dh_up, dh_lo) = match problem.limit_scaling {
                LimitScaling::Scaled => (case.flow_max[l], -case.flow_min[l]),
                LimitScaling::Unscaled => (0.0, 0.0),
            };
            jz[(n + m_e + up, l)] = mu_u * (flow - dh_up);
            jz[(n + m_e + lo, l)] = mu_l * (-flow - dh_lo);
        }
    }
    Ok(KktSystem {
        jx,
        jz,
        n,
        m_e,
        m_i,
        n_line: nl,
    })
}

/// Solves `J_x S = -J_z` and returns the primal rows of `S`.
///
/// Rows are equilibrated to unit max-norm first (this leaves `S`
/// unchanged); if the equilibrated matrix has condition estimate above
/// [`CONDITION_LIMIT`] or fails to factor, `TIKHONOV_SHIFT * I` is added.
pub fn solve_sensitivity(kkt: &KktSystem) -> Result<SensitivityResult, DiffError> {
    let dim = kkt.jx.nrows();
    if kkt.jx.ncols() != dim || kkt.jz.nrows() != dim {
        return Err(DiffError::Dimension("J_x must be square and match J_z".into()));
    }
    let mut jx = kkt.jx.clone();
    let mut rhs = -&kkt.jz;
    for i in 0..dim {
        let s = jx.row(i).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if s > 0.0 {
            jx.row_mut(i).scale_mut(1.0 / s);
            rhs.row_mut(i).scale_mut(1.0 / s);
        }
    }
    let condition = condition_estimate_1(&jx);
    let attempt = |m: DMatrix<f64>| -> Option<DMatrix<f64>> {
        let s = m.lu().solve(&rhs)?;
        s.iter().all(|v| v.is_finite()).then_some(s)
    };
    let (s, regularized) = match (condition <= CONDITION_LIMIT).then(|| attempt(jx.clone())).flatten() {
        Some(s) => (s, false),
        None => {
            let shifted = jx + DMatrix::identity(dim, dim) * TIKHONOV_SHIFT;
            (attempt(shifted).ok_or(DiffError::SensitivityFailure)?, true)
        }
    };
    Ok(SensitivityResult {
        dx_dz: s.rows(0, kkt.n).into_owned(),
        condition_estimate: condition,
        regularized,
    })
}

/// `dC/dz = (dC/dpg)' dpg/dz` with `dC/dpg = 2 c2 pg + c1`; angles do not
/// enter the cost.
pub fn loss_grad_wrt_z(case: &GridCase, dispatch: &Dispatch, sens: &SensitivityResult) -> Vec<f64> {
    let ng = case.n_gen();
    (0..sens.dx_dz.ncols())
        .map(|l| {
            (0..ng)
                .map(|g| case.cost[g].marginal(dispatch.pg[g]) * sens.dx_dz[(g, l)])
                .sum()
        })
        .collect()
}

/// Everything the trainer needs from one relaxed OPF.
#[derive(Debug, Clone)]
pub struct ImplicitGradient {
    pub dispatch: Dispatch,
    pub grad: Vec<f64>,
    pub regularized: bool,
    pub condition_estimate: f64,
}

/// Solves the relaxed OPF at `z` and differentiates its cost.
pub fn implicit_grad(case: &GridCase, pd: &[f64], z: &[f64], options: &OpfOptions) -> Result<ImplicitGradient, DiffError> {
    let zv = SwitchVector::relaxed(z)?;
    let problem = build_opf(case, pd, &zv, options.limit_scaling)?;
    let (sol, dispatch) = problem.solve(case, &options.qp)?;
    let kkt = build_kkt_jacobians(case, &problem, &sol)?;
    let sens = solve_sensitivity(&kkt)?;
    Ok(ImplicitGradient {
        grad: loss_grad_wrt_z(case, &dispatch, &sens),
        dispatch,
        regularized: sens.regularized,
        condition_estimate: sens.condition_estimate,
    })
}

/// Inequality rows identified as active (`mu > slack`).
pub fn active_set(problem: &OpfProblem, sol: &QpSolution) -> Vec<bool> {
    let slack = &problem.qp.h_ineq - &problem.qp.g_ineq * &sol.x;
    sol.mu.iter().zip(slack.iter()).map(|(m, s)| m > s).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FiniteDiffGradient {
    pub grad: Vec<f64>,
    /// False where a perturbed solve was not optimal.
    pub reliable: Vec<bool>,
    /// True where the active sets of the two perturbed solves differ.
    pub active_set_changed: Vec<bool>,
}

/// Central differences of the relaxed OPF cost, two solves per line.
pub fn finite_diff_grad(
    case: &GridCase,
    pd: &[f64],
    z: &[f64],
    step: f64,
    options: &OpfOptions,
) -> Result<FiniteDiffGradient, DiffError> {
    if !(step > 0.0) || z.iter().any(|&v| v - step < 0.0 || v + step > 1.0) {
        return Err(DiffError::Step);
    }
    let solve = |zz: &[f64]| -> Result<(f64, bool, Vec<bool>), DiffError> {
        let problem = build_opf(case, pd, &SwitchVector::relaxed(zz)?, options.limit_scaling)?;
        let (sol, d) = problem.solve(case, &options.qp)?;
        let active = active_set(&problem, &sol);
        Ok((d.cost, d.is_optimal(), active))
    };
    let mut out = FiniteDiffGradient {
        grad: Vec::with_capacity(z.len()),
        reliable: Vec::with_capacity(z.len()),
        active_set_changed: Vec::with_capacity(z.len()),
    };
    for l in 0..z.len() {
        let mut plus = z.to_vec();
        plus[l] += step;
        let mut minus = z.to_vec();
        minus[l] -= step;
        let (cp, okp, ap) = solve(&plus)?;
        let (cm, okm, am) = solve(&minus)?;
        out.grad.push((cp - cm) / (2.0 * step));
        out.reliable.push(okp && okm);
        out.active_set_changed.push(ap != am);
    }
    Ok(out)
}

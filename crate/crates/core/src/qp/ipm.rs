//! Mehrotra predictor-corrector interior-point method on the reduced
//! (normal-equation-free) KKT system, with an optional active-set polish.

use nalgebra::{DMatrix, DVector};

use super::{kkt_residuals, kkt_residuals_relative, QpError, QpProblem, QpSettings, QpSolution, QpStatus};
use crate::linalg::{independent_rows, max_abs, norm_inf, select, select_rows, vstack};

const STEP_FRACTION: f64 = 0.99;
const KKT_REG: f64 = 1e-13;
const DEPENDENT_ROW_TOL: f64 = 1e-10;
/// Inequality rows this small relative to the largest row, with a
/// non-negative right-hand side, are treated as `0 <= h` and dropped.
const NEGLIGIBLE_ROW: f64 = 1e-12;

/// Solves a convex QP. Infeasibility and iteration-cap failures are
/// reported through [`QpSolution::status`]; `Err` is reserved for malformed
/// input.
pub fn solve_qp(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    problem.validate()?;
    if !(settings.tol > 0.0 && settings.tol <= 1e-2) {
        return Err(QpError::Settings(format!("tol must lie in (0, 1e-2], got {}", settings.tol)));
    }
    if settings.max_iter == 0 {
        return Err(QpError::Settings("max_iter must be positive".into()));
    }
    let n = problem.n_var();
    let (m_e, m_i) = (problem.n_eq(), problem.n_ineq());

    let keep_eq = independent_rows(&problem.a_eq, DEPENDENT_ROW_TOL);
    let row_norms: Vec<f64> = (0..m_i)
        .map(|i| problem.g_ineq.row(i).iter().fold(0.0f64, |a, v| a.max(v.abs())))
        .collect();
    let negligible = NEGLIGIBLE_ROW * row_norms.iter().fold(0.0f64, |a, &v| a.max(v));
    let mut keep_in = Vec::with_capacity(m_i);
    for (i, &row_norm) in row_norms.iter().enumerate() {
        let h = problem.h_ineq[i];
        if row_norm == 0.0 && h < 0.0 {
            // 0 <= h_i < 0
            return Ok(failed(n, m_e, m_i, QpStatus::Infeasible, 0));
        }
        if row_norm > negligible || h < 0.0 {
            keep_in.push(i);
        }
    }

    let a = select_rows(&problem.a_eq, &keep_eq);
    let g = select_rows(&problem.g_ineq, &keep_in);
    let row_scale = |m: &DMatrix<f64>| -> DVector<f64> {
        DVector::from_iterator(
            m.nrows(),
            m.row_iter().map(|r| 1.0 / r.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))),
        )
    };
    let da = row_scale(&a);
    let dg = row_scale(&g);
    let sigma = 1.0f64.max(max_abs(&problem.quad)).max(norm_inf(&problem.lin));

    let scaled = Scaled {
        q: &problem.quad / sigma,
        c: &problem.lin / sigma,
        a: DMatrix::from_diagonal(&da) * &a,
        b: select(&problem.b_eq, &keep_eq).component_mul(&da),
        g: DMatrix::from_diagonal(&dg) * &g,
        h: select(&problem.h_ineq, &keep_in).component_mul(&dg),
    };

    let (mut it, outcome, iterations) = scaled.interior_point(settings.tol * 0.1, settings.max_iter);
    let mut polished = false;
    if outcome == Outcome::Converged && settings.polish {
        if let Some(p) = scaled.polish(&it) {
            it = p;
            polished = true;
        }
    }

    let mut lambda = DVector::zeros(m_e);
    for (k, &row) in keep_eq.iter().enumerate() {
        lambda[row] = sigma * da[k] * it.lambda[k];
    }
    let mut mu = DVector::zeros(m_i);
    for (k, &row) in keep_in.iter().enumerate() {
        mu[row] = sigma * dg[k] * it.mu[k];
    }
    let x = it.x;

    let abs = kkt_residuals(problem, &x, &lambda, &mu);
    let rel = kkt_residuals_relative(problem, &x, &lambda, &mu);
    let dual_ok = mu.iter().all(|&v| v >= -settings.tol);
    let status = match outcome {
        Outcome::Infeasible => QpStatus::Infeasible,
        Outcome::Converged if rel.max() <= settings.tol && dual_ok => QpStatus::Optimal,
        Outcome::Converged if rel.primal_eq > settings.tol => {
            // a dropped dependent equality row is inconsistent
            QpStatus::Infeasible
        }
        _ => QpStatus::NumericalFailure,
    };
    if status != QpStatus::Optimal {
        log::debug!(
            "qp finished {:?} after {iterations} iterations, residuals {:?}",
            status,
            rel
        );
    }
    Ok(QpSolution {
        x,
        lambda,
        mu,
        status,
        kkt_residual: abs.max(),
        kkt_residual_rel: rel.max(),
        iterations,
        polished,
    })
}

fn failed(n: usize, m_e: usize, m_i: usize, status: QpStatus, iterations: usize) -> QpSolution {
    QpSolution {
        x: DVector::zeros(n),
        lambda: DVector::zeros(m_e),
        mu: DVector::zeros(m_i),
        status,
        kkt_residual: f64::INFINITY,
        kkt_residual_rel: f64::INFINITY,
        iterations,
        polished: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Converged,
    Infeasible,
    MaxIter,
    Stalled,
}

#[derive(Debug, Clone)]
struct Iterate {
    x: DVector<f64>,
    lambda: DVector<f64>,
    mu: DVector<f64>,
    s: DVector<f64>,
}

/// Problem after dependent-row removal, row equilibration and objective
/// normalization.
struct Scaled {
    q: DMatrix<f64>,
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
}

struct Residuals {
    dual: DVector<f64>,
    eq: DVector<f64>,
    ineq: DVector<f64>,
}

impl Scaled {
    fn n(&self) -> usize {
        self.c.len()
    }

    fn residuals(&self, it: &Iterate) -> Residuals {
        Residuals {
            dual: &self.q * &it.x + &self.c + self.a.tr_mul(&it.lambda) + self.g.tr_mul(&it.mu),
            eq: &self.a * &it.x - &self.b,
            ineq: &self.g * &it.x + &it.s - &self.h,
        }
    }

    /// Reduced KKT matrix `[[Q + G'WG, A'], [A, 0]]` with a small diagonal
    /// regularization.
    fn reduced_kkt(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n();
        let m_e = self.b.len();
        let mut k = DMatrix::zeros(n + m_e, n + m_e);
        let gw = DMatrix::from_diagonal(w) * &self.g;
        let h = &self.q + self.g.tr_mul(&gw);
        k.view_mut((0, 0), (n, n)).copy_from(&h);
        k.view_mut((0, n), (n, m_e)).copy_from(&self.a.transpose());
        k.view_mut((n, 0), (m_e, n)).copy_from(&self.a);
        for i in 0..n {
            k[(i, i)] += KKT_REG;
        }
        for i in n..n + m_e {
            k[(i, i)] -= KKT_REG;
        }
        k
    }

    fn initial_point(&self) -> Iterate {
        let n = self.n();
        let m_e = self.b.len();
        let m_i = self.h.len();
        let mut k = self.reduced_kkt(&DVector::from_element(m_i, 1.0));
        // keep the start well defined even without inequalities
        for i in 0..n {
            k[(i, i)] += 1e-8;
        }
        let mut rhs = DVector::zeros(n + m_e);
        rhs.rows_mut(0, n).copy_from(&(-&self.c + self.g.tr_mul(&self.h)));
        rhs.rows_mut(n, m_e).copy_from(&self.b);
        let sol = k.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(n + m_e));
        let x = sol.rows(0, n).into_owned();
        let lambda = sol.rows(n, m_e).into_owned();
        let mut s = &self.h - &self.g * &x;
        let min_s = s.iter().copied().fold(f64::INFINITY, f64::min);
        if min_s < 1.0 {
            s.add_scalar_mut(1.0 - min_s.min(0.0));
        }
        s.apply(|v| *v = v.max(1.0));
        Iterate {
            x,
            lambda,
            mu: DVector::from_element(m_i, 1.0),
            s,
        }
    }

    fn interior_point(&self, tol: f64, max_iter: usize) -> (Iterate, Outcome, usize) {
        let n = self.n();
        let m_e = self.b.len();
        let m_i = self.h.len();
        let mut it = self.initial_point();
        let mut stalls = 0;

        for iter in 0..max_iter {
            let r = self.residuals(&it);
            let gap = if m_i > 0 { it.s.dot(&it.mu) / m_i as f64 } else { 0.0 };
            let comp = it
                .s
                .iter()
                .zip(it.mu.iter())
                .fold(0.0f64, |acc, (s, m)| acc.max(s * m));
            if norm_inf(&r.dual) <= tol && norm_inf(&r.eq) <= tol && norm_inf(&r.ineq) <= tol && comp <= tol {
                return (it, Outcome::Converged, iter);
            }
            if self.farkas_certificate(&it) {
                return (it, Outcome::Infeasible, iter);
            }

            let w = it.mu.component_div(&it.s);
            let lu = self.reduced_kkt(&w).lu();

            let solve = |rc: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
                // S dmu + M ds = -rc,  G dx + ds = -r_ineq
                let t = (-rc + it.mu.component_mul(&r.ineq)).component_div(&it.s);
                let mut rhs = DVector::zeros(n + m_e);
                rhs.rows_mut(0, n).copy_from(&(-&r.dual - self.g.tr_mul(&t)));
                rhs.rows_mut(n, m_e).copy_from(&(-&r.eq));
                let sol = lu.solve(&rhs)?;
                let dx = sol.rows(0, n).into_owned();
                let dl = sol.rows(n, m_e).into_owned();
                let ds = -&r.ineq - &self.g * &dx;
                let dm = (-rc - it.mu.component_mul(&ds)).component_div(&it.s);
                Some((dx, dl, dm, ds))
            };

            let rc_aff = it.s.component_mul(&it.mu);
            let Some((_, _, dm_aff, ds_aff)) = solve(&rc_aff) else {
                return (it, Outcome::Stalled, iter);
            };
            let alpha_aff = max_step(&it.s, &ds_aff).min(max_step(&it.mu, &dm_aff));
            let gap_aff = if m_i > 0 {
                (&it.s + &ds_aff * alpha_aff).dot(&(&it.mu + &dm_aff * alpha_aff)) / m_i as f64
            } else {
                0.0
            };
            let centering = if gap > 0.0 { (gap_aff / gap).powi(3).min(1.0) } else { 0.0 };

            let mut rc = rc_aff + ds_aff.component_mul(&dm_aff);
            rc.add_scalar_mut(-centering * gap);
            let Some((dx, dl, dm, ds)) = solve(&rc) else {
                return (it, Outcome::Stalled, iter);
            };
            let alpha = (STEP_FRACTION * max_step(&it.s, &ds).min(max_step(&it.mu, &dm))).min(1.0);
            if alpha < 1e-12 {
                stalls += 1;
                if stalls > 5 {
                    return (it, Outcome::Stalled, iter);
                }
            } else {
                stalls = 0;
            }
            it.x.axpy(alpha, &dx, 1.0);
            it.lambda.axpy(alpha, &dl, 1.0);
            it.mu.axpy(alpha, &dm, 1.0);
            it.s.axpy(alpha, &ds, 1.0);
            // guard against round-off pushing iterates onto the boundary
            it.mu.apply(|v| *v = v.max(1e-300));
            it.s.apply(|v| *v = v.max(1e-300));
        }
        (it, Outcome::MaxIter, max_iter)
    }

    /// Detects a primal infeasibility certificate in the (diverging) duals:
    /// `A'l + G'm ~ 0`, `m >= 0`, `b'l + h'm < 0`.
    fn farkas_certificate(&self, it: &Iterate) -> bool {
        let scale = norm_inf(&it.lambda).max(norm_inf(&it.mu));
        if scale < 1e4 {
            return false;
        }
        let l = &it.lambda / scale;
        let m = &it.mu / scale;
        let value = self.b.dot(&l) + self.h.dot(&m);
        if value >= 0.0 {
            return false;
        }
        let res = norm_inf(&(self.a.tr_mul(&l) + self.g.tr_mul(&m)));
        let x_bound = 10.0 * (1.0 + it.x.iter().map(|v| v.abs()).sum::<f64>());
        res * x_bound < 0.5 * value.abs()
    }

    /// Solves the equality-constrained KKT system on the constraints the
    /// interior point identifies as active. Returns `None` when the system is
    /// singular or the result is not a better KKT point.
    fn polish(&self, ipm: &Iterate) -> Option<Iterate> {
        let n = self.n();
        let m_e = self.b.len();
        let m_i = self.h.len();
        let active: Vec<usize> = (0..m_i).filter(|&i| ipm.mu[i] > ipm.s[i]).collect();
        let g_act = select_rows(&self.g, &active);
        let stacked = vstack(&[&self.a, &g_act], n);
        let keep = independent_rows(&stacked, 1e-9);
        if keep.len() < m_e || keep[..m_e] != (0..m_e).collect::<Vec<_>>()[..] {
            return None;
        }
        let rows = select_rows(&stacked, &keep);
        let rhs_rows = {
            let full = DVector::from_iterator(
                m_e + active.len(),
                self.b.iter().copied().chain(active.iter().map(|&i| self.h[i])),
            );
            select(&full, &keep)
        };
        let m = keep.len();
        let mut k = DMatrix::zeros(n + m, n + m);
        k.view_mut((0, 0), (n, n)).copy_from(&self.q);
        k.view_mut((0, n), (n, m)).copy_from(&rows.transpose());
        k.view_mut((n, 0), (m, n)).copy_from(&rows);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-&self.c));
        rhs.rows_mut(n, m).copy_from(&rhs_rows);
        let sol = k.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }

        let x = sol.rows(0, n).into_owned();
        let lambda = sol.rows(n, m_e).into_owned();
        let mut mu = DVector::zeros(m_i);
        for (k_idx, &row) in keep.iter().enumerate().skip(m_e) {
            let v = sol[n + k_idx];
            mu[active[row - m_e]] = v;
        }
        let mu_scale = 1.0 + norm_inf(&mu);
        if mu.iter().any(|&v| v < -1e-9 * mu_scale) {
            return None;
        }
        mu.apply(|v| *v = v.max(0.0));
        let slack = &self.h - &self.g * &x;
        if slack.iter().any(|&v| v < -1e-9 * (1.0 + norm_inf(&self.h))) {
            return None;
        }
        let polished = Iterate {
            s: slack.map(|v| v.max(0.0)),
            x,
            lambda,
            mu,
        };
        let score = |it: &Iterate| {
            let r = self.residuals(it);
            let comp = it
                .mu
                .iter()
                .zip((&self.g * &it.x - &self.h).iter())
                .fold(0.0f64, |acc, (m, s)| acc.max((m * s).abs()));
            let infeas = (&self.g * &it.x - &self.h).iter().fold(0.0f64, |acc, v| acc.max(*v));
            norm_inf(&r.dual).max(norm_inf(&r.eq)).max(comp).max(infeas)
        };
        (score(&polished) <= score(ipm)).then_some(polished)
    }
}

/// Largest step in (0, 1/STEP_FRACTION] keeping `v + t dv >= 0`.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(1.0 / STEP_FRACTION, f64::min)
}

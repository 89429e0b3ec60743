//! Dense convex quadratic programming.
//!
//! ```text
//!   minimize    1/2 x'Qx + q'x + offset
//!   subject to  A x  = b      (multipliers lambda, free)
//!               G x <= h      (multipliers mu >= 0)
//! ```
//!
//! Sign convention for the Lagrangian: `f(x) + lambda'(Ax - b) + mu'(Gx - h)`,
//! so stationarity reads `Qx + q + A'lambda + G'mu = 0`.

mod ipm;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{max_abs, norm_inf};

pub use ipm::solve_qp;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("objective matrix is not symmetric (asymmetry {0:e})")]
    Asymmetric(f64),
    #[error("invalid settings: {0}")]
    Settings(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpProblem {
    pub quad: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub offset: f64,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub g_ineq: DMatrix<f64>,
    pub h_ineq: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        quad: DMatrix<f64>,
        lin: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        g_ineq: DMatrix<f64>,
        h_ineq: DVector<f64>,
    ) -> Result<Self, QpError> {
        let p = Self {
            quad,
            lin,
            offset: 0.0,
            a_eq,
            b_eq,
            g_ineq,
            h_ineq,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n_var(&self) -> usize {
        self.lin.len()
    }

    pub fn n_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.h_ineq.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n_var();
        let dim = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(QpError::Dimension(what.to_string()))
            }
        };
        dim(self.quad.nrows() == n && self.quad.ncols() == n, "Q must be n x n")?;
        dim(self.a_eq.ncols() == n, "A must have n columns")?;
        dim(self.a_eq.nrows() == self.b_eq.len(), "A rows must match b")?;
        dim(self.g_ineq.ncols() == n, "G must have n columns")?;
        dim(self.g_ineq.nrows() == self.h_ineq.len(), "G rows must match h")?;
        let asym = max_abs(&(&self.quad - self.quad.transpose()));
        if asym > 1e-12 * max_abs(&self.quad).max(1.0) {
            return Err(QpError::Asymmetric(asym));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.quad * x)) + self.lin.dot(x) + self.offset
    }

    /// Lagrangian dual function value at `(lambda, mu)` evaluated through the
    /// primal point `x` that minimizes the Lagrangian (any stationary `x`).
    pub fn lagrangian(&self, x: &DVector<f64>, lambda: &DVector<f64>, mu: &DVector<f64>) -> f64 {
        self.objective(x)
            + lambda.dot(&(&self.a_eq * x - &self.b_eq))
            + mu.dot(&(&self.g_ineq * x - &self.h_ineq))
    }

    /// JSON dump of the problem data for offline inspection.
    pub fn debug_json(&self) -> String {
        #[derive(Serialize)]
        struct Dump<'a> {
            q_mat: Vec<Vec<f64>>,
            q: &'a [f64],
            a: Vec<Vec<f64>>,
            b: &'a [f64],
            g: Vec<Vec<f64>>,
            h: &'a [f64],
        }
        let rows = |m: &DMatrix<f64>| m.row_iter().map(|r| r.iter().copied().collect()).collect();
        serde_json::to_string(&Dump {
            q_mat: rows(&self.quad),
            q: self.lin.as_slice(),
            a: rows(&self.a_eq),
            b: self.b_eq.as_slice(),
            g: rows(&self.g_ineq),
            h: self.h_ineq.as_slice(),
        })
        .expect("qp serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_ineq: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_eq)
            .max(self.primal_ineq)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub mu: DVector<f64>,
    pub status: QpStatus,
    /// Largest absolute KKT residual.
    pub kkt_residual: f64,
    /// Residuals normalized by the magnitude of the terms they compare.
    pub kkt_residual_rel: f64,
    pub iterations: usize,
    /// Whether the returned point came from the active-set refinement.
    pub polished: bool,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Re-solve the KKT equations on the identified active set after the
    /// interior-point phase and keep the result when it is more accurate.
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            polish: true,
        }
    }
}

/// Recomputes the KKT residuals of `(x, lambda, mu)` from the problem data.
pub fn kkt_residuals(
    p: &QpProblem,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
) -> KktResiduals {
    let station = &p.quad * x + &p.lin + p.a_eq.tr_mul(lambda) + p.g_ineq.tr_mul(mu);
    let slack = &p.g_ineq * x - &p.h_ineq;
    KktResiduals {
        stationarity: norm_inf(&station),
        primal_eq: norm_inf(&(&p.a_eq * x - &p.b_eq)),
        primal_ineq: slack.iter().fold(0.0, |acc, v| acc.max(*v)),
        complementarity: mu
            .iter()
            .zip(slack.iter())
            .fold(0.0, |acc, (m, s)| acc.max((m * s).abs())),
    }
}

/// Same residuals, each divided by one plus the size of the terms it
/// balances.
pub fn kkt_residuals_relative(
    p: &QpProblem,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
) -> KktResiduals {
    let abs = kkt_residuals(p, x, lambda, mu);
    let qx = norm_inf(&(&p.quad * x));
    let dual_scale = 1.0
        + qx.max(norm_inf(&p.lin))
            .max(norm_inf(&p.a_eq.tr_mul(lambda)))
            .max(norm_inf(&p.g_ineq.tr_mul(mu)));
    let eq_scale = 1.0 + norm_inf(&(&p.a_eq * x)).max(norm_inf(&p.b_eq));
    let ineq_scale = 1.0 + norm_inf(&(&p.g_ineq * x)).max(norm_inf(&p.h_ineq));
    KktResiduals {
        stationarity: abs.stationarity / dual_scale,
        primal_eq: abs.primal_eq / eq_scale,
        primal_ineq: abs.primal_ineq / ineq_scale,
        complementarity: abs.complementarity / (dual_scale * ineq_scale),
    }
}

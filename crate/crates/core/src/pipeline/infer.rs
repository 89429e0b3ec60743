use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{PipelineError, AUDIT_TOL};
use crate::case::{GridCase, Topology};
use crate::dcopf::{check_feasibility, solve_dcopf_with, Dispatch, OpfOptions, SwitchVector, ViolationReport};
use crate::nn::{forward, MlpParams, Mode};

/// Closes line `l` iff `z_hat[l] >= threshold`.
pub fn binarize(z_hat: &[f64], threshold: f64) -> SwitchVector {
    let closed: Vec<bool> = z_hat.iter().map(|&v| v >= threshold).collect();
    SwitchVector::binary(&closed)
}

#[derive(Debug, Clone, Serialize)]
pub struct Inference {
    pub z_hat: Vec<f64>,
    pub z_bar: SwitchVector,
    /// `None` when the topology strands load and no OPF was attempted.
    pub dispatch: Option<Dispatch>,
    pub report: Option<ViolationReport>,
    /// Stranded load or a non-optimal OPF.
    pub flagged_infeasible: bool,
    /// Forward pass, binarization, connectivity check and OPF solve.
    pub time_s: f64,
}

impl Inference {
    /// Counts as a violation: flagged, or the audit found a residual.
    pub fn violated(&self) -> bool {
        self.flagged_infeasible || self.report.as_ref().is_none_or(|r| r.violated)
    }

    pub fn cost(&self) -> Option<f64> {
        (!self.flagged_infeasible).then(|| self.dispatch.as_ref().map(|d| d.cost)).flatten()
    }
}

/// Eval-mode forward, binarization and one DC-OPF under the predicted
/// topology, followed by an untimed feasibility audit.
pub fn infer(
    model: &MlpParams,
    case: &GridCase,
    pd: &[f64],
    threshold: f64,
    options: &OpfOptions,
) -> Result<Inference, PipelineError> {
    model.check_case(case.n_bus(), case.n_line())?;
    if pd.len() != case.n_bus() {
        return Err(PipelineError::Config(format!(
            "demand has {} entries, case has {} buses",
            pd.len(),
            case.n_bus()
        )));
    }
    let start = Instant::now();
    // eval mode never draws
    let (z_hat, _) = forward(model, pd, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0));
    let z_bar = binarize(&z_hat, threshold);
    let connected = Topology::of(case).serves_all_load(case.slack, &z_bar.closed(), pd);
    let dispatch = if connected {
        Some(solve_dcopf_with(case, pd, &z_bar, options)?)
    } else {
        None
    };
    let time_s = start.elapsed().as_secs_f64();

    let report = match &dispatch {
        Some(d) => Some(check_feasibility(case, pd, &z_bar, d, AUDIT_TOL)?),
        None => None,
    };
    let flagged_infeasible = dispatch.as_ref().is_none_or(|d| !d.is_optimal());
    Ok(Inference {
        z_hat,
        z_bar,
        dispatch,
        report,
        flagged_infeasible,
        time_s,
    })
}

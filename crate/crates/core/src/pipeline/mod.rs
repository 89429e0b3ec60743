//! Training, inference, benchmarking and the diagnostics built on top of
//! them.

mod bench;
mod diagnostics;
mod infer;
mod train;

use thiserror::Error;

use crate::case::CaseError;
use crate::dcopf::DcopfError;
use crate::diffgrad::DiffError;
use crate::nn::NnError;
use crate::ots::OtsError;

pub use bench::{
    audit_ed, evaluate, evaluate_records, sweep_line_limits, summarize, BenchRow, EvalConfig, Method, OtsSolver,
    ScenarioRecord, SweepRow, DEFAULT_SWEEP_SCALES,
};
pub use diagnostics::{gradient_check, init_histogram, GradCheckRecord, Histogram};
pub use infer::{binarize, infer, Inference};
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome};

/// Audit tolerance in per unit used for every feasibility verdict.
pub const AUDIT_TOL: f64 = 1e-6;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(
        "{skipped} of {total} first-epoch samples had an infeasible or degenerate relaxed OPF; \
         the output layer probably does not start from a feasible topology"
    )]
    InitFailure { skipped: usize, total: usize },
    #[error("the DADNN method needs a model")]
    MissingModel,
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dcopf(#[from] DcopfError),
    #[error(transparent)]
    Ots(#[from] OtsError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{infer, mean_std, PipelineError, AUDIT_TOL, DEFAULT_THRESHOLD};
use crate::case::{GridCase, LoadScenario};
use crate::dcopf::{check_feasibility, solve_dcopf_with, solve_ed, Dispatch, OpfOptions, SwitchVector};
use crate::nn::MlpParams;
use crate::ots::{branch_and_bound_ots, enumerate_ots, BnbOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ED")]
    Ed,
    #[serde(rename = "DCOPF")]
    Dcopf,
    #[serde(rename = "OTS_exact")]
    OtsExact,
    #[serde(rename = "DADNN")]
    Dadnn,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ed, Method::Dcopf, Method::OtsExact, Method::Dadnn];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ed => "ED",
            Method::Dcopf => "DCOPF",
            Method::OtsExact => "OTS_exact",
            Method::Dadnn => "DADNN",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OtsSolver {
    Enumerate,
    BranchAndBound(BnbOptions),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    pub ots: OtsSolver,
    pub threshold: f64,
    pub opf: OpfOptions,
    /// Run scenarios concurrently. Per-scenario times are then measured
    /// under contention.
    pub parallel: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            ots: OtsSolver::Enumerate,
            threshold: DEFAULT_THRESHOLD,
            opf: OpfOptions::default(),
            parallel: true,
        }
    }
}

/// Outcome of one method on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioRecord {
    pub scenario: usize,
    pub method: Method,
    /// `None` when the method produced no feasible dispatch.
    pub cost: Option<f64>,
    pub ineq_violated: bool,
    pub eq_violated: bool,
    pub infeasible: bool,
    pub time_s: f64,
    /// Open line indices joined by `;`.
    pub open_lines: String,
}

/// Aggregate over a test set. Costs average the feasible instances only;
/// violation percentages count instances, infeasible ones included.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: Method,
    pub avg_cost_k: f64,
    pub ineq_viol_pct: f64,
    pub eq_viol_pct: f64,
    pub avg_time_s: f64,
    pub std_time_s: f64,
    pub scenarios: usize,
    pub infeasible: usize,
}

pub const DEFAULT_SWEEP_SCALES: [f64; 6] = [0.90, 0.95, 1.00, 1.10, 1.20, 1.30];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub scale: f64,
    pub method: Method,
    pub avg_cost_k: f64,
    pub ineq_viol_pct: f64,
    pub eq_viol_pct: f64,
    pub avg_time_s: f64,
    pub infeasible: usize,
    #[serde(skip)]
    pub records: Vec<ScenarioRecord>,
}

/// Residuals of an economic dispatch against what it models: aggregate
/// balance (equality) and generator bounds (inequality).
pub fn audit_ed(case: &GridCase, pd: &[f64], dispatch: &Dispatch) -> (f64, f64) {
    let eq = (dispatch.pg.iter().sum::<f64>() - pd.iter().sum::<f64>()).abs();
    let ineq = dispatch
        .pg
        .iter()
        .enumerate()
        .map(|(g, &p)| (p - case.pg_max[g]).max(case.pg_min[g] - p))
        .fold(0.0f64, f64::max);
    (eq, ineq)
}

fn open_lines(z: &SwitchVector) -> String {
    z.open_lines().iter().map(|l| l.to_string()).collect::<Vec<_>>().join(";")
}

fn from_network(
    scenario: usize,
    method: Method,
    case: &GridCase,
    pd: &[f64],
    z: &SwitchVector,
    dispatch: &Dispatch,
    time_s: f64,
) -> Result<ScenarioRecord, PipelineError> {
    let report = check_feasibility(case, pd, z, dispatch, AUDIT_TOL)?;
    let infeasible = !dispatch.is_optimal();
    Ok(ScenarioRecord {
        scenario,
        method,
        cost: (!infeasible).then_some(dispatch.cost),
        ineq_violated: infeasible || report.max_ineq_violation > AUDIT_TOL,
        eq_violated: infeasible || report.max_eq_violation > AUDIT_TOL,
        infeasible,
        time_s,
        open_lines: open_lines(z),
    })
}

fn failed(scenario: usize, method: Method, time_s: f64, open: String) -> ScenarioRecord {
    ScenarioRecord {
        scenario,
        method,
        cost: None,
        ineq_violated: true,
        eq_violated: true,
        infeasible: true,
        time_s,
        open_lines: open,
    }
}

fn run_method(
    method: Method,
    model: Option<&MlpParams>,
    case: &GridCase,
    s: &LoadScenario,
    config: &EvalConfig,
) -> Result<ScenarioRecord, PipelineError> {
    let pd = s.pd.as_slice();
    let start = Instant::now();
    match method {
        Method::Ed => {
            let d = solve_ed(case, pd, &config.opf.qp)?;
            let time_s = start.elapsed().as_secs_f64();
            if !d.is_optimal() {
                return Ok(failed(s.id, method, time_s, String::new()));
            }
            let (eq, ineq) = audit_ed(case, pd, &d);
            Ok(ScenarioRecord {
                scenario: s.id,
                method,
                cost: Some(d.cost),
                ineq_violated: ineq > AUDIT_TOL,
                eq_violated: eq > AUDIT_TOL,
                infeasible: false,
                time_s,
                open_lines: String::new(),
            })
        }
        Method::Dcopf => {
            let z = SwitchVector::all_closed(case.n_line());
            let d = solve_dcopf_with(case, pd, &z, &config.opf)?;
            from_network(s.id, method, case, pd, &z, &d, start.elapsed().as_secs_f64())
        }
        Method::OtsExact => {
            let res = match config.ots {
                OtsSolver::Enumerate => enumerate_ots(case, pd, None, &config.opf),
                OtsSolver::BranchAndBound(opts) => branch_and_bound_ots(case, pd, &opts),
            };
            let time_s = start.elapsed().as_secs_f64();
            match res {
                Ok(r) => from_network(s.id, method, case, pd, &r.z_star, &r.dispatch, time_s),
                Err(e) => {
                    log::warn!("scenario {}: exact OTS failed: {e}", s.id);
                    Ok(failed(s.id, method, time_s, String::new()))
                }
            }
        }
        Method::Dadnn => {
            let model = model.ok_or(PipelineError::MissingModel)?;
            let r = infer(model, case, pd, config.threshold, &config.opf)?;
            let report = r.report.as_ref();
            Ok(ScenarioRecord {
                scenario: s.id,
                method,
                cost: if r.violated() { None } else { r.cost() },
                ineq_violated: r.flagged_infeasible || report.is_none_or(|v| v.max_ineq_violation > AUDIT_TOL),
                eq_violated: r.flagged_infeasible || report.is_none_or(|v| v.max_eq_violation > AUDIT_TOL),
                infeasible: r.flagged_infeasible,
                time_s: r.time_s,
                open_lines: open_lines(&r.z_bar),
            })
        }
    }
}

/// Per-scenario results of every configured method, sorted by scenario and
/// method.
pub fn evaluate_records(
    model: Option<&MlpParams>,
    case: &GridCase,
    scenarios: &[LoadScenario],
    config: &EvalConfig,
) -> Result<Vec<ScenarioRecord>, PipelineError> {
    if config.methods.contains(&Method::Dadnn) && model.is_none() {
        return Err(PipelineError::MissingModel);
    }
    if let Some(s) = scenarios.iter().find(|s| s.pd.len() != case.n_bus()) {
        return Err(PipelineError::Config(format!(
            "scenario {} has {} loads, case has {} buses",
            s.id,
            s.pd.len(),
            case.n_bus()
        )));
    }
    let mut methods = config.methods.clone();
    methods.sort();
    methods.dedup();
    let one = |s: &LoadScenario| -> Result<Vec<ScenarioRecord>, PipelineError> {
        methods.iter().map(|&m| run_method(m, model, case, s, config)).collect()
    };
    let nested: Vec<Vec<ScenarioRecord>> = if config.parallel {
        scenarios.par_iter().map(one).collect::<Result<_, _>>()?
    } else {
        scenarios.iter().map(one).collect::<Result<_, _>>()?
    };
    let mut records: Vec<ScenarioRecord> = nested.into_iter().flatten().collect();
    records.sort_by_key(|r| (r.scenario, r.method));
    Ok(records)
}

/// Aggregates records into one row per method present, in method order.
pub fn summarize(records: &[ScenarioRecord]) -> Vec<BenchRow> {
    let mut methods: Vec<Method> = records.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    methods
        .into_iter()
        .map(|method| {
            let rs: Vec<&ScenarioRecord> = records.iter().filter(|r| r.method == method).collect();
            let n = rs.len() as f64;
            let costs: Vec<f64> = rs.iter().filter_map(|r| r.cost).collect();
            let times: Vec<f64> = rs.iter().map(|r| r.time_s).collect();
            let (avg_time_s, std_time_s) = mean_std(&times);
            let pct = |f: fn(&ScenarioRecord) -> bool| 100.0 * rs.iter().filter(|r| f(r)).count() as f64 / n;
            BenchRow {
                method,
                avg_cost_k: mean_std(&costs).0 / 1000.0,
                ineq_viol_pct: pct(|r| r.ineq_violated),
                eq_viol_pct: pct(|r| r.eq_violated),
                avg_time_s,
                std_time_s,
                scenarios: rs.len(),
                infeasible: rs.iter().filter(|r| r.infeasible).count(),
            }
        })
        .collect()
}

/// Runs the configured methods on every scenario and aggregates them.
pub fn evaluate(
    model: Option<&MlpParams>,
    case: &GridCase,
    scenarios: &[LoadScenario],
    config: &EvalConfig,
) -> Result<Vec<BenchRow>, PipelineError> {
    Ok(summarize(&evaluate_records(model, case, scenarios, config)?))
}

/// Re-evaluates a fixed model with every line rating multiplied by each
/// scale. Nothing is retrained.
pub fn sweep_line_limits(
    model: Option<&MlpParams>,
    case: &GridCase,
    scenarios: &[LoadScenario],
    scales: &[f64],
    config: &EvalConfig,
) -> Result<Vec<SweepRow>, PipelineError> {
    if let Some(s) = scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(PipelineError::Config(format!("limit scale {s} must be positive")));
    }
    let mut out = Vec::new();
    for &scale in scales {
        let scaled = case.with_flow_limit_scale(scale);
        let records = evaluate_records(model, &scaled, scenarios, config)?;
        for row in summarize(&records) {
            out.push(SweepRow {
                scale,
                method: row.method,
                avg_cost_k: row.avg_cost_k,
                ineq_viol_pct: row.ineq_viol_pct,
                eq_viol_pct: row.eq_viol_pct,
                avg_time_s: row.avg_time_s,
                infeasible: row.infeasible,
                records: records.iter().filter(|r| r.method == row.method).cloned().collect(),
            });
        }
    }
    Ok(out)
}

//! Grid data: MATPOWER ingestion, the compiled per-unit network model,
//! and load-scenario datasets.

mod compile;
mod dataset;
pub mod matpower;
mod topology;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compile::{compile_case, UNLIMITED_FLOW_PU};
pub use dataset::{
    generate_dataset, split_dataset, Dataset, LoadScenario, SamplingConfig, SplitFractions,
    SplitTag,
};
pub use matpower::{parse_matpower, RawCase};
pub use topology::Topology;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing required block `{0}`")]
    MissingBlock(String),
    #[error("invalid case data: {0}")]
    Data(String),
    #[error("network is not connected: bus {0} cannot reach the reference bus")]
    Disconnected(usize),
    #[error("generator {gen}: {msg}")]
    UnsupportedCost { gen: usize, msg: String },
    #[error("invalid case json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("sampling failed: accepted {accepted} of {draws} draws, needed {needed}")]
    SamplingFailure {
        accepted: usize,
        draws: usize,
        needed: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Quadratic generator cost `c2 p^2 + c1 p + c0` in $/h with `p` in per unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCoeffs {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl CostCoeffs {
    pub fn eval(&self, p: f64) -> f64 {
        (self.c2 * p + self.c1) * p + self.c0
    }

    pub fn marginal(&self, p: f64) -> f64 {
        2.0 * self.c2 * p + self.c1
    }
}

/// Compiled DC network in per unit.
///
/// `gen_incidence` is `N_b x N_g` with a one where a generator sits;
/// `branch_incidence` is `N_l x N_b` with `+1` at the from bus and `-1` at the
/// to bus. Angle bounds at the reference bus are both zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub name: String,
    pub base_mva: f64,
    pub bus_ids: Vec<usize>,
    pub slack: usize,
    pub line_from: Vec<usize>,
    pub line_to: Vec<usize>,
    pub gen_bus: Vec<usize>,
    pub gen_incidence: DMatrix<f64>,
    pub branch_incidence: DMatrix<f64>,
    pub susceptance: DVector<f64>,
    pub flow_max: DVector<f64>,
    pub flow_min: DVector<f64>,
    pub pg_max: DVector<f64>,
    pub pg_min: DVector<f64>,
    pub theta_max: DVector<f64>,
    pub theta_min: DVector<f64>,
    pub cost: Vec<CostCoeffs>,
    pub base_demand: DVector<f64>,
}

impl GridCase {
    pub fn n_bus(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn n_gen(&self) -> usize {
        self.gen_bus.len()
    }

    pub fn n_line(&self) -> usize {
        self.line_from.len()
    }

    /// Reads a case from either MATPOWER source (`.m`) or the canonical JSON
    /// form, chosen by file extension.
    pub fn load(path: impl AsRef<std::path::Path>, angle_limit: f64) -> Result<Self, CaseError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let is_json = path
            .extension()
            .is_some_and(|ext| ext.eq_ignore_ascii_case("json"));
        if is_json {
            Self::from_json(&text)
        } else {
            let raw = parse_matpower(&text)?;
            let mut case = compile_case(&raw, angle_limit)?;
            if let Some(stem) = path.file_stem() {
                case.name = stem.to_string_lossy().into_owned();
            }
            Ok(case)
        }
    }

    /// Total generation cost in $/h of a per-unit dispatch.
    pub fn generation_cost(&self, pg: &[f64]) -> f64 {
        assert_eq!(pg.len(), self.n_gen(), "dispatch length must equal N_g");
        self.cost.iter().zip(pg).map(|(c, &p)| c.eval(p)).sum()
    }

    /// A copy with every line rating multiplied by `scale`.
    pub fn with_flow_limit_scale(&self, scale: f64) -> Self {
        let mut out = self.clone();
        out.flow_max *= scale;
        out.flow_min *= scale;
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CaseJson::from(self)).expect("case serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CaseError> {
        let json: CaseJson = serde_json::from_str(text)?;
        json.try_into()
    }
}

/// On-disk canonical case: explicit row-major matrices, per unit.
#[derive(Serialize, Deserialize)]
struct CaseJson {
    format: String,
    name: String,
    base_mva: f64,
    bus_ids: Vec<usize>,
    slack: usize,
    line_from: Vec<usize>,
    line_to: Vec<usize>,
    gen_bus: Vec<usize>,
    gen_incidence: Vec<Vec<f64>>,
    branch_incidence: Vec<Vec<f64>>,
    susceptance: Vec<f64>,
    flow_max: Vec<f64>,
    flow_min: Vec<f64>,
    pg_max: Vec<f64>,
    pg_min: Vec<f64>,
    theta_max: Vec<f64>,
    theta_min: Vec<f64>,
    cost: Vec<CostCoeffs>,
    base_demand: Vec<f64>,
}

const CASE_FORMAT: &str = "gridswitch-case/1";

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>, CaseError> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CaseError::Data(format!("{what}: every row needs {ncols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl From<&GridCase> for CaseJson {
    fn from(c: &GridCase) -> Self {
        let v = |x: &DVector<f64>| x.iter().copied().collect::<Vec<_>>();
        CaseJson {
            format: CASE_FORMAT.to_string(),
            name: c.name.clone(),
            base_mva: c.base_mva,
            bus_ids: c.bus_ids.clone(),
            slack: c.slack,
            line_from: c.line_from.clone(),
            line_to: c.line_to.clone(),
            gen_bus: c.gen_bus.clone(),
            gen_incidence: rows(&c.gen_incidence),
            branch_incidence: rows(&c.branch_incidence),
            susceptance: v(&c.susceptance),
            flow_max: v(&c.flow_max),
            flow_min: v(&c.flow_min),
            pg_max: v(&c.pg_max),
            pg_min: v(&c.pg_min),
            theta_max: v(&c.theta_max),
            theta_min: v(&c.theta_min),
            cost: c.cost.clone(),
            base_demand: v(&c.base_demand),
        }
    }
}

impl TryFrom<CaseJson> for GridCase {
    type Error = CaseError;

    fn try_from(j: CaseJson) -> Result<Self, CaseError> {
        if j.format != CASE_FORMAT {
            return Err(CaseError::Data(format!("unsupported case format `{}`", j.format)));
        }
        let nb = j.bus_ids.len();
        let ng = j.gen_bus.len();
        let nl = j.line_from.len();
        let check = |len: usize, want: usize, what: &str| {
            if len == want {
                Ok(())
            } else {
                Err(CaseError::Data(format!("{what} has length {len}, expected {want}")))
            }
        };
        check(j.line_to.len(), nl, "line_to")?;
        check(j.gen_incidence.len(), nb, "gen_incidence")?;
        check(j.branch_incidence.len(), nl, "branch_incidence")?;
        for (v, want, what) in [
            (&j.susceptance, nl, "susceptance"),
            (&j.flow_max, nl, "flow_max"),
            (&j.flow_min, nl, "flow_min"),
            (&j.pg_max, ng, "pg_max"),
            (&j.pg_min, ng, "pg_min"),
            (&j.theta_max, nb, "theta_max"),
            (&j.theta_min, nb, "theta_min"),
            (&j.base_demand, nb, "base_demand"),
        ] {
            check(v.len(), want, what)?;
        }
        check(j.cost.len(), ng, "cost")?;
        if j.slack >= nb {
            return Err(CaseError::Data("slack index out of range".into()));
        }
        let dv = |x: Vec<f64>| DVector::from_vec(x);
        Ok(GridCase {
            gen_incidence: from_rows(&j.gen_incidence, ng, "gen_incidence")?,
            branch_incidence: from_rows(&j.branch_incidence, nb, "branch_incidence")?,
            name: j.name,
            base_mva: j.base_mva,
            bus_ids: j.bus_ids,
            slack: j.slack,
            line_from: j.line_from,
            line_to: j.line_to,
            gen_bus: j.gen_bus,
            susceptance: dv(j.susceptance),
            flow_max: dv(j.flow_max),
            flow_min: dv(j.flow_min),
            pg_max: dv(j.pg_max),
            pg_min: dv(j.pg_min),
            theta_max: dv(j.theta_max),
            theta_min: dv(j.theta_min),
            cost: j.cost,
            base_demand: dv(j.base_demand),
        })
    }
}

/// Bundled fixtures used by tests, examples and the acceptance suite.
pub mod fixtures {
    use super::{compile_case, parse_matpower, GridCase};

    pub const TRIANGLE3: &str = include_str!("../../data/triangle3.m");
    pub const PENT5: &str = include_str!("../../data/pent5.m");
    pub const MESH8: &str = include_str!("../../data/mesh8.m");

    /// Nodal angle bound used throughout the experiments, in radians.
    pub const ANGLE_LIMIT: f64 = 0.6;

    fn build(name: &str, text: &str) -> GridCase {
        let raw = parse_matpower(text).expect("bundled fixture parses");
        let mut case = compile_case(&raw, ANGLE_LIMIT).expect("bundled fixture compiles");
        case.name = name.to_string();
        case
    }

    /// Three-bus ring with a congested line 1-3 (line index 2).
    pub fn triangle3() -> GridCase {
        build("triangle3", TRIANGLE3)
    }

    /// Five buses, six lines, quadratic costs.
    pub fn pent5() -> GridCase {
        build("pent5", PENT5)
    }

    /// Eight buses, twelve lines, congested load pocket.
    pub fn mesh8() -> GridCase {
        build("mesh8", MESH8)
    }
}

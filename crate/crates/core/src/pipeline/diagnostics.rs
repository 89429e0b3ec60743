use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::PipelineError;
use crate::case::{GridCase, LoadScenario};
use crate::dcopf::{solve_dcopf_with, OpfOptions, SwitchVector};
use crate::diffgrad::{finite_diff_grad, implicit_grad};
use crate::nn::{forward, MlpParams, Mode};

/// Equal-width bins over `[0, 1]`; the last bin is closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn occupied(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

/// Eval-mode predictions of `model` on every scenario, binned.
pub fn init_histogram(model: &MlpParams, scenarios: &[&[f64]], bins: usize) -> Result<Histogram, PipelineError> {
    if bins == 0 {
        return Err(PipelineError::Config("need at least one bin".into()));
    }
    if let Some(pd) = scenarios.iter().find(|pd| pd.len() != model.input_dim()) {
        return Err(PipelineError::Config(format!(
            "scenario has {} loads, model expects {}",
            pd.len(),
            model.input_dim()
        )));
    }
    let mut counts = vec![0usize; bins];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for pd in scenarios {
        let (z, _) = forward(model, pd, Mode::Eval, &mut rng);
        for v in z {
            counts[((v * bins as f64) as usize).min(bins - 1)] += 1;
        }
    }
    Ok(Histogram {
        edges: (0..=bins).map(|k| k as f64 / bins as f64).collect(),
        counts,
    })
}

/// Implicit versus finite-difference gradient at one `(pd, z)` pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckRecord {
    pub sample: usize,
    pub scenario: usize,
    pub z: Vec<f64>,
    pub implicit: Vec<f64>,
    pub finite_diff: Vec<f64>,
    /// `|implicit - fd|_2 / max(|fd|_2, 1e-6 (1 + |cost|))`.
    pub rel_err: f64,
    /// An active set changed across a perturbation, a perturbed solve was
    /// not optimal, or the base solve stopped short of a vertex.
    pub excluded: bool,
    pub regularized: bool,
}

const Z_LOW: f64 = 0.3;
const MAX_DRAWS: usize = 1000;
/// Base solves with a larger KKT residual were not polished to a vertex
/// (degenerate active set); their finite differences track solver drift.
const VERTEX_RESIDUAL: f64 = 1e-9;

/// Compares gradients at `samples` random pairs. Scenarios are used
/// round-robin; each `z` is drawn uniformly from `[0.3, 1 - step]` per
/// line, redrawn until the relaxed OPF is feasible.
pub fn gradient_check(
    case: &GridCase,
    scenarios: &[LoadScenario],
    samples: usize,
    step: f64,
    seed: u64,
    options: &OpfOptions,
) -> Result<Vec<GradCheckRecord>, PipelineError> {
    if scenarios.is_empty() && samples > 0 {
        return Err(PipelineError::Config("no scenarios to check".into()));
    }
    if !(step > 0.0 && step < (1.0 - Z_LOW) / 2.0) {
        return Err(PipelineError::Config(format!("finite-difference step {step} out of range")));
    }
    let results: Vec<Option<GradCheckRecord>> = (0..samples)
        .into_par_iter()
        .map(|k| -> Result<Option<GradCheckRecord>, PipelineError> {
            let s = &scenarios[k % scenarios.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            for _ in 0..MAX_DRAWS {
                let z: Vec<f64> = (0..case.n_line()).map(|_| rng.random_range(Z_LOW..=1.0 - step)).collect();
                let d = solve_dcopf_with(case, &s.pd, &SwitchVector::relaxed(&z)?, options)?;
                if !d.is_optimal() {
                    continue;
                }
                let Ok(imp) = implicit_grad(case, &s.pd, &z, options) else {
                    continue;
                };
                let fd = finite_diff_grad(case, &s.pd, &z, step, options)?;
                let diff: f64 = imp.grad.iter().zip(&fd.grad).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let norm: f64 = fd.grad.iter().map(|v| v * v).sum::<f64>().sqrt();
                return Ok(Some(GradCheckRecord {
                    sample: k,
                    scenario: s.id,
                    excluded: fd.active_set_changed.iter().any(|&c| c)
                        || fd.reliable.iter().any(|&r| !r)
                        || d.kkt_residual > VERTEX_RESIDUAL,
                    rel_err: diff / norm.max(1e-6 * (1.0 + imp.dispatch.cost.abs())),
                    z,
                    implicit: imp.grad,
                    finite_diff: fd.grad,
                    regularized: imp.regularized,
                }));
            }
            log::warn!("sample {k}: no feasible relaxed topology in {MAX_DRAWS} draws");
            Ok(None)
        })
        .collect::<Result<_, _>>()?;
    Ok(results.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::fixtures;
    use crate::nn::{init_network, init_network_with, LastLayerInit};

    #[test]
    fn feasible_init_fills_top_bin() {
        let model = init_network(3, 16, 3, 0);
        let pds = [[0.0, 0.0, 1.0], [0.0, 0.0, 1.1], [5.0, -3.0, 0.2]];
        let refs: Vec<&[f64]> = pds.iter().map(|p| p.as_slice()).collect();
        let h = init_histogram(&model, &refs, 1000).unwrap();
        assert_eq!(h.total(), 9);
        assert_eq!(h.counts[999], 9);
        assert_eq!(h.occupied(), 1);
        assert_eq!(h.edges.len(), 1001);
    }

    #[test]
    fn random_init_spreads() {
        let model = init_network_with(3, 16, 3, 3, LastLayerInit::Random, 0.1, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pds: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let refs: Vec<&[f64]> = pds.iter().map(|p| p.as_slice()).collect();
        assert!(init_histogram(&model, &refs, 50).unwrap().occupied() > 3);
    }

    #[test]
    fn no_scenarios_no_mass() {
        let model = init_network(3, 4, 3, 0);
        let h = init_histogram(&model, &[], 10).unwrap();
        assert_eq!(h.total(), 0);
        assert!(init_histogram(&model, &[], 0).is_err());
    }

    #[test]
    fn gradcheck_on_triangle() {
        let case = fixtures::triangle3();
        let s = vec![LoadScenario {
            id: 7,
            alpha: vec![1.0; 3],
            pd: case.base_demand.iter().copied().collect(),
            opf_feasible: true,
            split: None,
        }];
        let recs = gradient_check(&case, &s, 6, 1e-5, 3, &OpfOptions::default()).unwrap();
        assert_eq!(recs.len(), 6);
        for r in recs.iter().filter(|r| !r.excluded) {
            assert!(r.rel_err < 1e-4, "{r:?}");
            assert_eq!(r.scenario, 7);
        }
        assert!(gradient_check(&case, &s, 1, 0.0, 3, &OpfOptions::default()).is_err());
    }
}

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{infer, PipelineError, DEFAULT_THRESHOLD};
use crate::case::{Dataset, GridCase, SplitTag};
use crate::dcopf::{solve_dcopf_with, OpfOptions, SwitchVector};
use crate::diffgrad::implicit_grad;
use crate::nn::{
    adamw_step, backward, forward, init_network_with, zero_gradients, AdamWState, Gradients, LastLayerInit, MlpParams,
    Mode, DEFAULT_HIDDEN_LAYERS,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Capped at the training-set size.
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub dropout: f64,
    pub seed: u64,
    pub last_layer: LastLayerInit,
    pub opf: OpfOptions,
    /// Binarization threshold for validation inference.
    pub threshold: f64,
    /// Abort when more than this share of first-epoch samples is skipped.
    pub max_skip_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 50,
            lr: 5e-5,
            weight_decay: 1e-2,
            hidden_dim: 128,
            hidden_layers: DEFAULT_HIDDEN_LAYERS,
            dropout: 0.1,
            seed: 0,
            last_layer: LastLayerInit::Feasible,
            opf: OpfOptions::default(),
            threshold: DEFAULT_THRESHOLD,
            max_skip_fraction: 0.5,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.into()));
        if self.batch_size == 0 || self.hidden_dim == 0 {
            return bad("batch size and hidden dimension must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("learning rate and weight decay must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.threshold) || !(0.0..=1.0).contains(&self.max_skip_fraction) {
            return bad("threshold and skip fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

/// One row of the loss curve. Epoch 0 is measured before any update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean relaxed-OPF generation cost over used training samples, $/h.
    pub train_loss: f64,
    /// Mean relaxed-OPF cost on the validation set (eval mode), $/h.
    pub val_cost: f64,
    /// Mean cost of binarized inference over feasible validation
    /// scenarios, $/h.
    pub val_infer_cost: f64,
    pub val_infeasible: usize,
    pub skipped: usize,
    /// Samples whose sensitivity solve needed regularization.
    pub regularized: usize,
    pub samples: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub params: MlpParams,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
}

struct SampleResult {
    loss: f64,
    grads: Gradients,
    regularized: bool,
}

/// Unsupervised training through the relaxed OPF layer.
///
/// Each mini-batch runs train-mode forwards, one relaxed OPF plus
/// sensitivity solve per sample (in parallel), backpropagates the cost
/// gradient and takes one AdamW step on the batch mean. Samples whose OPF
/// is not optimal or whose sensitivity solve fails are skipped. The
/// returned parameters are those of the epoch with the fewest infeasible
/// validation inferences, then the lowest inference cost, then the lowest
/// relaxed cost.
pub fn train(case: &GridCase, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome, PipelineError> {
    config.validate()?;
    dataset.check_against(case)?;
    let train_set: Vec<&[f64]> = dataset.with_tag(SplitTag::Train).map(|s| s.pd.as_slice()).collect();
    if train_set.is_empty() {
        return Err(PipelineError::Config("dataset has no training scenarios".into()));
    }
    let mut val_set: Vec<&[f64]> = dataset.with_tag(SplitTag::Val).map(|s| s.pd.as_slice()).collect();
    if val_set.is_empty() {
        log::warn!("no validation scenarios; selecting on the training set");
        val_set = train_set.clone();
    }
    let batch = config.batch_size.min(train_set.len());

    let mut params = init_network_with(
        case.n_bus(),
        config.hidden_dim,
        case.n_line(),
        config.hidden_layers,
        config.last_layer,
        config.dropout,
        config.seed,
    );
    params.fit_normalization(train_set.iter().copied());
    let mut opt = AdamWState::new(&params, config.lr, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_da7a);

    let start = Instant::now();
    let (val_cost, val_infer_cost, val_infeasible) = validate(case, &params, &val_set, config)?;
    let train_loss = eval_loss(case, &params, &train_set, config);
    let mut curve = vec![EpochRecord {
        epoch: 0,
        train_loss,
        val_cost,
        val_infer_cost,
        val_infeasible,
        skipped: 0,
        regularized: 0,
        samples: 0,
        wall_time_s: start.elapsed().as_secs_f64(),
    }];
    let mut best = (params.clone(), 0usize);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut used, mut skipped, mut regularized) = (0.0, 0usize, 0usize, 0usize);
        for chunk in order.chunks(batch) {
            let passes: Vec<_> = chunk
                .iter()
                .map(|&i| forward(&params, train_set[i], Mode::Train, &mut rng))
                .collect();
            let results: Vec<Option<SampleResult>> = chunk
                .par_iter()
                .zip(passes.par_iter())
                .map(|(&i, (z_hat, trace))| {
                    let g = implicit_grad(case, train_set[i], z_hat, &config.opf).ok()?;
                    if !g.dispatch.is_optimal() || g.grad.iter().any(|v| !v.is_finite()) {
                        return None;
                    }
                    let grads = backward(&params, trace, &g.grad).ok()?;
                    Some(SampleResult {
                        loss: g.dispatch.cost,
                        grads,
                        regularized: g.regularized,
                    })
                })
                .collect();

            let mut acc = zero_gradients(&params);
            let mut batch_used = 0usize;
            for r in results {
                let Some(r) = r else {
                    skipped += 1;
                    continue;
                };
                batch_used += 1;
                loss_sum += r.loss;
                regularized += r.regularized as usize;
                for ((aw, ab), (gw, gb)) in acc.iter_mut().zip(&r.grads) {
                    *aw += gw;
                    *ab += gb;
                }
            }
            used += batch_used;
            if batch_used == 0 {
                continue;
            }
            let scale = 1.0 / batch_used as f64;
            for (aw, ab) in acc.iter_mut() {
                *aw *= scale;
                *ab *= scale;
            }
            adamw_step(&mut params, &acc, &mut opt)?;
        }

        let total = train_set.len();
        if epoch == 1 && skipped as f64 > config.max_skip_fraction * total as f64 {
            return Err(PipelineError::InitFailure { skipped, total });
        }
        let (val_cost, val_infer_cost, val_infeasible) = validate(case, &params, &val_set, config)?;
        let record = EpochRecord {
            epoch,
            train_loss: if used > 0 { loss_sum / used as f64 } else { f64::NAN },
            val_cost,
            val_infer_cost,
            val_infeasible,
            skipped,
            regularized,
            samples: used,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} val {:.4} infer {:.4} infeasible {} skipped {}",
            record.train_loss,
            record.val_cost,
            record.val_infer_cost,
            record.val_infeasible,
            record.skipped
        );
        if better(&record, &curve[best.1]) {
            best = (params.clone(), epoch);
        }
        curve.push(record);
    }
    Ok(TrainOutcome {
        params: best.0,
        curve,
        best_epoch: best.1,
    })
}

fn better(a: &EpochRecord, b: &EpochRecord) -> bool {
    let key = |r: &EpochRecord| (r.val_infeasible, nan_last(r.val_infer_cost), nan_last(r.val_cost));
    let (ka, kb) = (key(a), key(b));
    ka.0 < kb.0 || (ka.0 == kb.0 && (ka.1 < kb.1 || (ka.1 == kb.1 && ka.2 < kb.2)))
}

fn nan_last(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Mean relaxed-OPF cost in eval mode over the optimal solves.
fn eval_loss(case: &GridCase, params: &MlpParams, set: &[&[f64]], config: &TrainConfig) -> f64 {
    let costs: Vec<Option<f64>> = set
        .par_iter()
        .map(|pd| {
            let (z_hat, _) = forward(params, pd, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0));
            let z = SwitchVector::relaxed(&z_hat).ok()?;
            let d = solve_dcopf_with(case, pd, &z, &config.opf).ok()?;
            d.is_optimal().then_some(d.cost)
        })
        .collect();
    let ok: Vec<f64> = costs.into_iter().flatten().collect();
    if ok.is_empty() {
        f64::NAN
    } else {
        ok.iter().sum::<f64>() / ok.len() as f64
    }
}

fn validate(
    case: &GridCase,
    params: &MlpParams,
    set: &[&[f64]],
    config: &TrainConfig,
) -> Result<(f64, f64, usize), PipelineError> {
    let relaxed = eval_loss(case, params, set, config);
    let runs = set
        .par_iter()
        .map(|pd| infer(params, case, pd, config.threshold, &config.opf))
        .collect::<Result<Vec<_>, _>>()?;
    let infeasible = runs.iter().filter(|r| r.violated()).count();
    let costs: Vec<f64> = runs.iter().filter(|r| !r.violated()).filter_map(|r| r.cost()).collect();
    let infer_cost = if costs.is_empty() {
        f64::NAN
    } else {
        costs.iter().sum::<f64>() / costs.len() as f64
    };
    Ok((relaxed, infer_cost, infeasible))
}

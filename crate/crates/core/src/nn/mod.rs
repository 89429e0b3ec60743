//! Fixed-topology multilayer perceptron: ELU hidden layers with inverted
//! dropout and a sigmoid head producing relaxed line states.

mod adamw;
mod io;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adamw::{adamw_step, AdamWState};
pub use io::{load_model, save_model, MODEL_FORMAT};

/// Last-layer bias giving every output `sigmoid(9)` on a fresh network.
pub const FEASIBLE_INIT_BIAS: f64 = 9.0;
pub const DEFAULT_HIDDEN_LAYERS: usize = 3;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unsupported model format `{0}`")]
    Version(String),
    #[error("trace does not belong to these parameters: {0}")]
    Trace(String),
    #[error("invalid model json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

/// Logistic function, kept strictly inside `(0, 1)`: saturated values are
/// pinned to the nearest representable neighbours of 0 and 1.
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub activation: Activation,
}

/// Network weights plus the input standardization learned from the
/// training set.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub dropout: f64,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
}

/// How the output layer starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LastLayerInit {
    /// `W = 0`, `b = 9`: every line starts (almost) closed.
    Feasible,
    /// Kaiming-uniform weights, zero bias.
    Random,
}

fn kaiming_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let bound = (6.0 / cols as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

/// Network with the feasibility-preserving output initialization and
/// [`DEFAULT_HIDDEN_LAYERS`] hidden layers.
pub fn init_network(n_bus: usize, hidden_dim: usize, n_line: usize, seed: u64) -> MlpParams {
    init_network_with(n_bus, hidden_dim, n_line, DEFAULT_HIDDEN_LAYERS, LastLayerInit::Feasible, 0.1, seed)
}

pub fn init_network_with(
    n_bus: usize,
    hidden_dim: usize,
    n_line: usize,
    hidden_layers: usize,
    last: LastLayerInit,
    dropout: f64,
    seed: u64,
) -> MlpParams {
    assert!(n_bus > 0 && hidden_dim > 0 && n_line > 0, "network dimensions must be positive");
    assert!((0.0..1.0).contains(&dropout), "dropout must lie in [0, 1)");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(hidden_layers + 1);
    let mut fan_in = n_bus;
    for _ in 0..hidden_layers {
        let w = kaiming_uniform(&mut rng, hidden_dim, fan_in);
        let bb = 1.0 / (fan_in as f64).sqrt();
        let b = DVector::from_fn(hidden_dim, |_, _| rng.random_range(-bb..=bb));
        layers.push(Layer {
            w,
            b,
            activation: Activation::Elu,
        });
        fan_in = hidden_dim;
    }
    let (w, b) = match last {
        LastLayerInit::Feasible => (
            DMatrix::zeros(n_line, fan_in),
            DVector::from_element(n_line, FEASIBLE_INIT_BIAS),
        ),
        LastLayerInit::Random => (kaiming_uniform(&mut rng, n_line, fan_in), DVector::zeros(n_line)),
    };
    layers.push(Layer {
        w,
        b,
        activation: Activation::Sigmoid,
    });
    MlpParams {
        layers,
        dropout,
        input_mean: vec![0.0; n_bus],
        input_std: vec![1.0; n_bus],
    }
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").w.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Checks the dimension chain and activation layout.
    pub fn validate(&self) -> Result<(), NnError> {
        let Some(last) = self.layers.last() else {
            return Err(NnError::Shape("network has no layers".into()));
        };
        if last.activation != Activation::Sigmoid {
            return Err(NnError::Shape("output activation must be sigmoid".into()));
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].w.nrows() != pair[1].w.ncols() {
                return Err(NnError::Shape(format!("layer {k} output does not feed layer {}", k + 1)));
            }
            if pair[0].activation != Activation::Elu {
                return Err(NnError::Shape(format!("hidden layer {k} must use ELU")));
            }
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.b.len() != l.w.nrows() {
                return Err(NnError::Shape(format!("layer {k} bias length")));
            }
        }
        if self.input_mean.len() != self.input_dim() || self.input_std.len() != self.input_dim() {
            return Err(NnError::Shape("normalization statistics length".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::Shape(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Rejects a model whose input/output sizes differ from a case's bus and
    /// line counts.
    pub fn check_case(&self, n_bus: usize, n_line: usize) -> Result<(), NnError> {
        if self.input_dim() != n_bus || self.output_dim() != n_line {
            return Err(NnError::Shape(format!(
                "model maps {} buses to {} lines, case has {n_bus} buses and {n_line} lines",
                self.input_dim(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Sets per-bus standardization from training inputs; near-constant
    /// inputs get unit scale.
    pub fn fit_normalization<'a>(&mut self, inputs: impl IntoIterator<Item = &'a [f64]>) {
        let d = self.input_dim();
        let mut n = 0usize;
        let mut mean = vec![0.0; d];
        let mut m2 = vec![0.0; d];
        for x in inputs {
            n += 1;
            for i in 0..d {
                let delta = x[i] - mean[i];
                mean[i] += delta / n as f64;
                m2[i] += delta * (x[i] - mean[i]);
            }
        }
        if n == 0 {
            return;
        }
        self.input_std = m2
            .iter()
            .map(|&s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        self.input_mean = mean;
    }

    fn standardize(&self, pd: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            pd.len(),
            pd.iter()
                .zip(&self.input_mean)
                .zip(&self.input_std)
                .map(|((x, m), s)| (x - m) / s),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-layer values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub mode: Mode,
    /// Standardized network input.
    pub input: DVector<f64>,
    pub pre: Vec<DVector<f64>>,
    /// Layer outputs after activation and dropout.
    pub post: Vec<DVector<f64>>,
    /// Inverted-dropout multipliers per hidden layer (train mode only).
    pub masks: Vec<Option<DVector<f64>>>,
}

/// Forward pass. In train mode each hidden activation is multiplied by an
/// inverted-dropout mask drawn from `rng`; eval mode draws nothing.
pub fn forward<R: Rng + ?Sized>(params: &MlpParams, pd: &[f64], mode: Mode, rng: &mut R) -> (Vec<f64>, ForwardTrace) {
    assert_eq!(pd.len(), params.input_dim(), "input length must equal N_b");
    let keep = 1.0 - params.dropout;
    let n_layers = params.layers.len();
    let mut masks = Vec::with_capacity(n_layers);
    for (k, layer) in params.layers.iter().enumerate() {
        let hidden = k + 1 < n_layers;
        masks.push((mode == Mode::Train && hidden).then(|| {
            DVector::from_fn(layer.w.nrows(), |_, _| {
                if rng.random::<f64>() < params.dropout {
                    0.0
                } else {
                    1.0 / keep
                }
            })
        }));
    }
    let trace = replay(params, pd, mode, masks);
    let out = trace.post.last().expect("output layer").iter().copied().collect();
    (out, trace)
}

/// Forward pass with given dropout masks.
pub fn replay(params: &MlpParams, pd: &[f64], mode: Mode, masks: Vec<Option<DVector<f64>>>) -> ForwardTrace {
    let input = params.standardize(pd);
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut post: Vec<DVector<f64>> = Vec::with_capacity(params.layers.len());
    for (k, layer) in params.layers.iter().enumerate() {
        let prev = if k == 0 { &input } else { &post[k - 1] };
        let a = &layer.w * prev + &layer.b;
        let mut h = a.map(|v| layer.activation.apply(v));
        if let Some(m) = &masks[k] {
            h.component_mul_assign(m);
        }
        pre.push(a);
        post.push(h);
    }
    ForwardTrace {
        mode,
        input,
        pre,
        post,
        masks,
    }
}

/// Gradients shaped like the parameters: `(dW, db)` per layer.
pub type Gradients = Vec<(DMatrix<f64>, DVector<f64>)>;

pub fn zero_gradients(params: &MlpParams) -> Gradients {
    params
        .layers
        .iter()
        .map(|l| (DMatrix::zeros(l.w.nrows(), l.w.ncols()), DVector::zeros(l.b.len())))
        .collect()
}

/// Reverse-mode pass: gradients of `upstream' z_hat` with respect to every
/// weight and bias.
pub fn backward(params: &MlpParams, trace: &ForwardTrace, upstream: &[f64]) -> Result<Gradients, NnError> {
    let n_layers = params.layers.len();
    if trace.pre.len() != n_layers || trace.masks.len() != n_layers {
        return Err(NnError::Trace("layer count".into()));
    }
    if upstream.len() != params.output_dim() {
        return Err(NnError::Shape("upstream gradient length must equal N_l".into()));
    }
    for (k, layer) in params.layers.iter().enumerate() {
        if trace.pre[k].len() != layer.w.nrows() {
            return Err(NnError::Trace(format!("layer {k} width")));
        }
    }
    if trace.input.len() != params.input_dim() {
        return Err(NnError::Trace("input width".into()));
    }

    let mut grads = Vec::with_capacity(n_layers);
    let mut delta = DVector::from_column_slice(upstream);
    for k in (0..n_layers).rev() {
        let layer = &params.layers[k];
        if let Some(m) = &trace.masks[k] {
            delta.component_mul_assign(m);
        }
        let a = &trace.pre[k];
        let local = match layer.activation {
            Activation::Sigmoid => a.map(|v| {
                let s = sigmoid(v);
                s * (1.0 - s)
            }),
            Activation::Elu => a.map(|v| if v > 0.0 { 1.0 } else { v.exp() }),
        };
        delta.component_mul_assign(&local);
        let prev = if k == 0 { &trace.input } else { &trace.post[k - 1] };
        let dw = &delta * prev.transpose();
        let next = layer.w.tr_mul(&delta);
        grads.push((dw, delta));
        delta = next;
    }
    grads.reverse();
    Ok(grads)
}

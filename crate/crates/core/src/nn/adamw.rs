use nalgebra::{DMatrix, DVector};

use super::{zero_gradients, Gradients, MlpParams, NnError};

/// AdamW optimizer state with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamWState {
    pub fn new(params: &MlpParams, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zero_gradients(params),
            v: zero_gradients(params),
        }
    }
}

fn update(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, s: &AdamWState, c1: f64, c2: f64) {
    *p *= 1.0 - s.lr * s.weight_decay;
    *m = s.beta1 * *m + (1.0 - s.beta1) * g;
    *v = s.beta2 * *v + (1.0 - s.beta2) * g * g;
    let m_hat = *m / c1;
    let v_hat = *v / c2;
    *p -= s.lr * m_hat / (v_hat.sqrt() + s.eps);
}

/// One AdamW update: `p <- p (1 - lr wd)`, then the bias-corrected Adam
/// step.
pub fn adamw_step(params: &mut MlpParams, grads: &Gradients, state: &mut AdamWState) -> Result<(), NnError> {
    let shapes_match = |a: &Gradients| {
        a.len() == params.layers.len()
            && a.iter().zip(&params.layers).all(|((w, b), l)| w.shape() == l.w.shape() && b.len() == l.b.len())
    };
    if !shapes_match(grads) || !shapes_match(&state.m) {
        return Err(NnError::Shape("gradients or optimizer state do not match the parameters".into()));
    }
    state.step += 1;
    let c1 = 1.0 - state.beta1.powi(state.step as i32);
    let c2 = 1.0 - state.beta2.powi(state.step as i32);
    let (mut m, mut v) = (std::mem::take(&mut state.m), std::mem::take(&mut state.v));
    for (k, layer) in params.layers.iter_mut().enumerate() {
        let (gw, gb) = &grads[k];
        step_matrix(&mut layer.w, gw, &mut m[k].0, &mut v[k].0, state, c1, c2);
        step_vector(&mut layer.b, gb, &mut m[k].1, &mut v[k].1, state, c1, c2);
    }
    state.m = m;
    state.v = v;
    Ok(())
}

fn step_matrix(p: &mut DMatrix<f64>, g: &DMatrix<f64>, m: &mut DMatrix<f64>, v: &mut DMatrix<f64>, s: &AdamWState, c1: f64, c2: f64) {
    for i in 0..p.len() {
        update(&mut p[i], g[i], &mut m[i], &mut v[i], s, c1, c2);
    }
}

fn step_vector(p: &mut DVector<f64>, g: &DVector<f64>, m: &mut DVector<f64>, v: &mut DVector<f64>, s: &AdamWState, c1: f64, c2: f64) {
    for i in 0..p.len() {
        update(&mut p[i], g[i], &mut m[i], &mut v[i], s, c1, c2);
    }
}

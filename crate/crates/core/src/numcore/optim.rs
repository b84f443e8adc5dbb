use serde::{Deserialize, Serialize};

use super::{NumError, ParamStore, Tensor};

/// AdamW hyper-parameters and per-parameter moment buffers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    #[serde(skip)]
    pub m: Vec<Tensor>,
    #[serde(skip)]
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    /// Zeroed moments shaped after every parameter of `store`.
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor> = store.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One decoupled-weight-decay Adam update over every trainable parameter.
///
/// Decay multiplies the parameter by `1 - lr * wd` before the moment update
/// is applied; it is never folded into the gradient.
pub fn adamw_step(state: &mut OptimizerState, store: &mut ParamStore) -> Result<(), NumError> {
    if state.m.len() != store.len() || state.v.len() != store.len() {
        return Err(NumError::InvalidArgument(format!(
            "optimizer tracks {} parameters, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    for p in store.params().iter().filter(|p| p.requires_grad) {
        if p.grad.is_none() {
            return Err(NumError::MissingGrad(p.name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let decay = 1.0 - state.lr * state.weight_decay;

    for (i, p) in store.params_mut().iter_mut().enumerate() {
        if !p.requires_grad {
            continue;
        }
        let grad = p.grad.as_ref().expect("checked above");
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        if m.numel() != p.value.numel() {
            return Err(NumError::ShapeMismatch {
                op: "adamw_step",
                left: p.value.shape().to_vec(),
                right: m.shape().to_vec(),
            });
        }
        let theta = p.value.data_mut();
        for j in 0..theta.len() {
            let g = grad.data()[j];
            let mj = &mut m.data_mut()[j];
            *mj = state.beta1 * *mj + (1.0 - state.beta1) * g;
            let mhat = *mj / bc1;
            let vj = &mut v.data_mut()[j];
            *vj = state.beta2 * *vj + (1.0 - state.beta2) * g * g;
            let vhat = *vj / bc2;
            theta[j] = theta[j] * decay - state.lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

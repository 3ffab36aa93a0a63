use alloc::vec;
use alloc::vec::Vec;

use super::DenoiserParams;
use crate::Result;

/// Learning rate used for every reported run.
pub const DEFAULT_LR: f64 = 1e-4;

/// Adam moment accumulators and hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &DenoiserParams, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.data.len()])
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut DenoiserParams,
    grads: &DenoiserParams,
    state: &mut OptimizerState,
) -> Result<()> {
    params.same_layout(grads)?;
    if state.first.len() != params.tensors().len()
        || state
            .first
            .iter()
            .zip(params.tensors())
            .any(|(m, t)| m.len() != t.data.len())
    {
        return Err(crate::error::dim_err!(
            "optimizer state does not match parameter layout"
        ));
    }
    state.step += 1;
    let step = state.step as f64;
    let c1 = 1.0 - libm::pow(state.beta1, step);
    let c2 = 1.0 - libm::pow(state.beta2, step);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);

    for (k, (p, g)) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads.tensors())
        .enumerate()
    {
        let m = &mut state.first[k];
        let v = &mut state.second[k];
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p.data[i] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        }
    }
    Ok(())
}

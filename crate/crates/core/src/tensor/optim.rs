use serde::{Deserialize, Serialize};

use super::DiffTensor;
use crate::error::{shape_err, Result};

/// Adam moments and hyperparameters for an ordered list of parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(1e-4)
    }
}

/// One bias-corrected Adam update. Returns fresh parameter leaves; a missing
/// gradient counts as zero.
pub fn adam_step(
    state: &mut AdamState,
    params: &[DiffTensor],
    grads: &[Option<Vec<f64>>],
) -> Result<Vec<DiffTensor>> {
    if params.len() != grads.len() {
        return shape_err(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        ));
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return shape_err("optimizer state was built for a different parameter list");
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if m.len() != p.len() || g.as_ref().is_some_and(|g| g.len() != p.len()) {
            return shape_err(format!("gradient shape mismatch for {:?}", p.shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let mut out = Vec::with_capacity(params.len());
    for (i, p) in params.iter().enumerate() {
        let mut data = p.data().to_vec();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..data.len() {
            let g = grads[i].as_ref().map_or(0.0, |g| g[j]);
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            data[j] -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
        out.push(DiffTensor::parameter(p.shape(), data)?);
    }
    Ok(out)
}

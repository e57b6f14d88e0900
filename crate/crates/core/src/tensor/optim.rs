use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ParameterStore, Tensor};
use crate::error::{Error, Result};

/// Adam optimiser state with bias-corrected moment estimates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState::new(1e-3)
    }
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Applies one Adam update to every parameter of `params`.
///
/// Every parameter must have a gradient of matching shape; nothing is
/// modified if one is missing.
pub fn adam_step(
    params: &mut ParameterStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::MissingGradient(name.to_string()))?;
        if g.shape() != p.shape() {
            return Err(Error::shape(
                format!("adam_step({name})"),
                format!("gradient {:?} vs parameter {:?}", g.shape(), p.shape()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads[name].data();
        let m = state
            .first
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; g.len()]);
        let v = state
            .second
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; g.len()]);
        for (((w, gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * gi;
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

use serde::{Deserialize, Serialize};

use super::{GradBundle, MlpModel};
use crate::error::{CoreError, Result};

/// Optimizer constants. Conventional defaults except the learning rate,
/// which each training stage sets explicitly.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_num: f64,
}

impl AdamParams {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_num: 1e-8,
        }
    }
}

/// First/second moment estimates matching a model's parameter shapes.
#[derive(Debug, Clone)]
pub struct AdamState {
    params: AdamParams,
    first_weights: Vec<Vec<f64>>,
    first_biases: Vec<Vec<f64>>,
    second_weights: Vec<Vec<f64>>,
    second_biases: Vec<Vec<f64>>,
    step_count: u64,
}

impl AdamState {
    pub fn new(model: &MlpModel, params: AdamParams) -> Self {
        let zw = || -> Vec<Vec<f64>> {
            model.weights().iter().map(|w| vec![0.0; w.len()]).collect()
        };
        let zb = || -> Vec<Vec<f64>> {
            model.biases().iter().map(|b| vec![0.0; b.len()]).collect()
        };
        Self {
            params,
            first_weights: zw(),
            first_biases: zb(),
            second_weights: zw(),
            second_biases: zb(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn params(&self) -> AdamParams {
        self.params
    }
}

/// One bias-corrected Adam update, in place. Increments the step count.
pub fn adam_step(model: &mut MlpModel, grads: &GradBundle, state: &mut AdamState) -> Result<()> {
    let shapes_match = grads.weights.len() == state.first_weights.len()
        && grads
            .weights
            .iter()
            .zip(state.first_weights.iter())
            .all(|(g, m)| g.len() == m.len())
        && grads
            .biases
            .iter()
            .zip(state.first_biases.iter())
            .all(|(g, m)| g.len() == m.len());
    if !shapes_match {
        return Err(CoreError::Shape(
            "adam_step: gradient shapes do not match optimizer state".to_string(),
        ));
    }

    state.step_count += 1;
    let AdamParams {
        learning_rate,
        beta1,
        beta2,
        epsilon_num,
    } = state.params;
    let bc1 = 1.0 - beta1.powi(state.step_count as i32);
    let bc2 = 1.0 - beta2.powi(state.step_count as i32);

    let update = |param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon_num);
        }
    };

    for k in 0..grads.weights.len() {
        update(
            &mut model.weights_mut()[k],
            &grads.weights[k],
            &mut state.first_weights[k],
            &mut state.second_weights[k],
        );
        update(
            &mut model.biases_mut()[k],
            &grads.biases[k],
            &mut state.first_biases[k],
            &mut state.second_biases[k],
        );
    }
    Ok(())
}

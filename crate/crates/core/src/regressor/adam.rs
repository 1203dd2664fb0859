//! Adam optimizer state and update rule.

use super::model::{Layer, Model};

/// Hyperparameters of the update rule.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Layer>,
    v: Vec<Layer>,
    step: u64,
}

impl AdamState {
    pub fn new(model: &Model) -> Self {
        let zeros: Vec<Layer> = model
            .layers
            .iter()
            .map(|l| Layer {
                weights: nalgebra::DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                bias: nalgebra::DVector::zeros(l.bias.len()),
            })
            .collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(model: &mut Model, grads: &[Layer], state: &mut AdamState, params: &AdamParams) {
    debug_assert_eq!(model.layers.len(), grads.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - params.beta1.powi(t);
    let bc2 = 1.0 - params.beta2.powi(t);
    for (li, layer) in model.layers.iter_mut().enumerate() {
        let g = &grads[li];
        update_tensor(
            layer.weights.as_mut_slice(),
            g.weights.as_slice(),
            self_slice(&mut state.m[li].weights),
            self_slice(&mut state.v[li].weights),
            params,
            bc1,
            bc2,
        );
        update_tensor(
            layer.bias.as_mut_slice(),
            g.bias.as_slice(),
            state.m[li].bias.as_mut_slice(),
            state.v[li].bias.as_mut_slice(),
            params,
            bc1,
            bc2,
        );
    }
}

fn self_slice(m: &mut nalgebra::DMatrix<f64>) -> &mut [f64] {
    m.as_mut_slice()
}

fn update_tensor(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    p: &AdamParams,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..theta.len() {
        m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * grad[i];
        v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= p.learning_rate * m_hat / (v_hat.sqrt() + p.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressor::{Model, ModelSpec};
    use nalgebra::{DMatrix, DVector};

    fn tiny_model() -> Model {
        Model::new(ModelSpec::linear(7), 2, 2).unwrap()
    }

    fn zero_grads(m: &Model) -> Vec<Layer> {
        m.layers
            .iter()
            .map(|l| Layer {
                weights: DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                bias: DVector::zeros(l.bias.len()),
            })
            .collect()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = tiny_model();
        let before = m.clone();
        let grads = zero_grads(&m);
        let mut state = AdamState::new(&m);
        adam_step(&mut m, &grads, &mut state, &AdamParams::default());
        assert_eq!(m, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // With bias correction, the first step is lr * g/|g| elementwise.
        let mut m = tiny_model();
        let before = m.clone();
        let mut grads = zero_grads(&m);
        grads[0].weights[(0, 0)] = 3.7;
        grads[0].weights[(1, 1)] = -0.002;
        let params = AdamParams { learning_rate: 0.05, ..AdamParams::default() };
        let mut state = AdamState::new(&m);
        adam_step(&mut m, &grads, &mut state, &params);
        let d00 = m.layers[0].weights[(0, 0)] - before.layers[0].weights[(0, 0)];
        let d11 = m.layers[0].weights[(1, 1)] - before.layers[0].weights[(1, 1)];
        assert!((d00 + 0.05).abs() < 1e-6, "step {d00}");
        assert!((d11 - 0.05).abs() < 1e-4, "step {d11}");
    }

    #[test]
    fn matches_reference_recurrence() {
        // Two identical steps against a hand-rolled scalar recurrence.
        let g = 0.3_f64;
        let p = AdamParams { learning_rate: 1e-2, ..AdamParams::default() };
        let mut theta_ref = 1.0_f64;
        let mut m_ref = 0.0;
        let mut v_ref = 0.0;
        for t in 1..=2 {
            m_ref = p.beta1 * m_ref + (1.0 - p.beta1) * g;
            v_ref = p.beta2 * v_ref + (1.0 - p.beta2) * g * g;
            let mh = m_ref / (1.0 - p.beta1.powi(t));
            let vh = v_ref / (1.0 - p.beta2.powi(t));
            theta_ref -= p.learning_rate * mh / (vh.sqrt() + p.epsilon);
        }

        let mut model = tiny_model();
        model.layers[0].weights[(0, 0)] = 1.0;
        let mut grads = zero_grads(&model);
        grads[0].weights[(0, 0)] = g;
        let mut state = AdamState::new(&model);
        adam_step(&mut model, &grads, &mut state, &p);
        adam_step(&mut model, &grads, &mut state, &p);
        assert!(
            (model.layers[0].weights[(0, 0)] - theta_ref).abs() < 1e-12,
            "{} vs {}",
            model.layers[0].weights[(0, 0)],
            theta_ref
        );
    }
}

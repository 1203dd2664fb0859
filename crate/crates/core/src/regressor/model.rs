//! Voxel-wise regression models: a plain affine map or a small MLP with
//! ReLU activations and inverted dropout.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Mlp,
}

/// Architecture description. `hidden` is ignored for linear models;
/// dropout applies after every hidden ReLU during training only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub dropout: f64,
    pub seed: u64,
}

impl ModelSpec {
    pub fn linear(seed: u64) -> Self {
        Self { kind: ModelKind::Linear, hidden: Vec::new(), dropout: 0.0, seed }
    }

    pub fn mlp(hidden: Vec<usize>, dropout: f64, seed: u64) -> Self {
        Self { kind: ModelKind::Mlp, hidden, dropout, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.kind == ModelKind::Linear && !self.hidden.is_empty() {
            return Err(Error::InvalidArgument(
                "linear models take no hidden layers".into(),
            ));
        }
        if self.kind == ModelKind::Mlp && self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidArgument("hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// One affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// A voxel-wise model mapping an input SH vector to 45 FOD coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<Layer>,
}

impl Model {
    /// Deterministic initialization from the spec seed (uniform He-style
    /// scaling per layer).
    pub fn new(spec: ModelSpec, input_dim: usize, output_dim: usize) -> Result<Self> {
        spec.validate()?;
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidArgument("model dimensions must be >= 1".into()));
        }
        let mut dims = vec![input_dim];
        if spec.kind == ModelKind::Mlp {
            dims.extend(&spec.hidden);
        }
        dims.push(output_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = (2.0 / fan_in as f64).sqrt();
                Layer {
                    weights: DMatrix::from_fn(fan_out, fan_in, |_, _| {
                        rng.random_range(-scale..scale)
                    }),
                    bias: DVector::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { spec, input_dim, output_dim, layers })
    }

    pub fn n_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Deterministic evaluation-mode forward pass on a batch (one column
    /// per voxel). Dropout is disabled.
    pub fn forward(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(inputs)?;
        let mut a = inputs.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            a = &layer.weights * a;
            for c in 0..a.ncols() {
                for r in 0..a.nrows() {
                    a[(r, c)] += layer.bias[r];
                }
            }
            if li + 1 < self.layers.len() {
                a.apply(|v| *v = v.max(0.0));
            }
        }
        Ok(a)
    }

    /// Training-mode forward pass keeping the per-layer activations and
    /// dropout masks needed by [`Model::backward`].
    pub fn forward_train(&self, inputs: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Result<TrainTrace> {
        self.check_input(inputs)?;
        let mut activations = vec![inputs.clone()];
        let mut masks = Vec::new();
        let keep = 1.0 - self.spec.dropout;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut a = &layer.weights * activations.last().unwrap();
            for c in 0..a.ncols() {
                for r in 0..a.nrows() {
                    a[(r, c)] += layer.bias[r];
                }
            }
            if li + 1 < self.layers.len() {
                a.apply(|v| *v = v.max(0.0));
                if self.spec.dropout > 0.0 {
                    // Inverted dropout: scale kept units by 1/keep so the
                    // evaluation pass needs no rescaling.
                    let mask = DMatrix::from_fn(a.nrows(), a.ncols(), |_, _| {
                        if rng.random_range(0.0..1.0) < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    a.component_mul_assign(&mask);
                    masks.push(Some(mask));
                } else {
                    masks.push(None);
                }
            }
            activations.push(a);
        }
        Ok(TrainTrace { activations, masks })
    }

    /// Backpropagation of the mean-squared-error loss through a recorded
    /// forward pass; returns per-layer gradients (same shapes as layers).
    pub fn backward(&self, trace: &TrainTrace, targets: &DMatrix<f64>) -> Vec<Layer> {
        let n = targets.ncols() as f64;
        let d_out = targets.nrows() as f64;
        let pred = trace.activations.last().unwrap();
        // loss = sum |pred - y|^2 / (n * d_out)
        let mut delta = (pred - targets) * (2.0 / (n * d_out));
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for li in (0..self.layers.len()).rev() {
            let input = &trace.activations[li];
            let g_w = &delta * input.transpose();
            let g_b = DVector::from_fn(delta.nrows(), |r, _| delta.row(r).sum());
            grads.push(Layer { weights: g_w, bias: g_b });
            if li > 0 {
                let mut back = self.layers[li].weights.transpose() * delta;
                // Through dropout, then ReLU (both recorded in the trace).
                if let Some(mask) = &trace.masks[li - 1] {
                    back.component_mul_assign(mask);
                }
                let act = &trace.activations[li];
                for c in 0..back.ncols() {
                    for r in 0..back.nrows() {
                        if act[(r, c)] <= 0.0 {
                            back[(r, c)] = 0.0;
                        }
                    }
                }
                delta = back;
            }
        }
        grads.reverse();
        grads
    }

    fn check_input(&self, inputs: &DMatrix<f64>) -> Result<()> {
        if inputs.nrows() != self.input_dim {
            return Err(Error::InvalidArgument(format!(
                "input has {} rows, model expects {}",
                inputs.nrows(),
                self.input_dim
            )));
        }
        Ok(())
    }
}

/// Activations and dropout masks recorded by a training forward pass.
pub struct TrainTrace {
    pub activations: Vec<DMatrix<f64>>,
    pub masks: Vec<Option<DMatrix<f64>>>,
}

/// Mean squared error over all entries (voxels x coefficients).
pub fn l2_loss(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(pred.shape(), target.shape());
    let n = (pred.nrows() * pred.ncols()) as f64;
    (pred - target).map(|v| v * v).sum() / n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero_output() {
        let mut m = Model::new(ModelSpec::linear(1), 4, 3).unwrap();
        for l in &mut m.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        let x = DMatrix::from_fn(4, 2, |i, j| (i + j) as f64);
        assert!(m.forward(&x).unwrap().amax() == 0.0);
    }

    #[test]
    fn linear_model_applies_known_affine_map() {
        let mut m = Model::new(ModelSpec::linear(2), 3, 2).unwrap();
        m.layers[0].weights = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        m.layers[0].bias = DVector::from_column_slice(&[0.5, -0.5]);
        let e1 = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let out = m.forward(&e1).unwrap();
        // Column 1 of W plus the bias.
        assert!((out[(0, 0)] - 1.5).abs() < 1e-15);
        assert!((out[(1, 0)] - 3.5).abs() < 1e-15);
    }

    #[test]
    fn eval_forward_is_dropout_free_and_deterministic() {
        let m = Model::new(ModelSpec::mlp(vec![8], 0.5, 3), 5, 4).unwrap();
        let x = DMatrix::from_fn(5, 3, |i, j| ((i * 3 + j) as f64).sin());
        let a = m.forward(&x).unwrap();
        let b = m.forward(&x).unwrap();
        assert_eq!(a, b);
        // Train mode with dropout differs from eval mode almost surely.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = m.forward_train(&x, &mut rng).unwrap();
        assert_ne!(*t.activations.last().unwrap(), a);
    }

    #[test]
    fn loss_examples() {
        let p = DMatrix::from_element(3, 2, 1.0);
        assert_eq!(l2_loss(&p, &p), 0.0);
        let q = DMatrix::from_element(3, 2, 2.0);
        assert!((l2_loss(&q, &p) - 1.0).abs() < 1e-15);
        // Doubling the residual quadruples the loss.
        let r = DMatrix::from_element(3, 2, 3.0);
        assert!((l2_loss(&r, &p) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        // Central finite differences over every parameter of a small MLP,
        // at 100 random parameter points, dropout off.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = DMatrix::from_fn(4, 6, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(3, 6, |_, _| rng.random_range(-1.0..1.0));
        let mut worst: f64 = 0.0;
        for point in 0..100 {
            let mut m = Model::new(ModelSpec::mlp(vec![5], 0.0, point as u64), 4, 3).unwrap();
            // Randomize biases too.
            for l in &mut m.layers {
                l.bias.apply(|v| *v = rng.random_range(-0.5..0.5));
            }
            let mut grad_rng = ChaCha8Rng::seed_from_u64(0);
            let trace = m.forward_train(&x, &mut grad_rng).unwrap();
            let grads = m.backward(&trace, &y);

            let h = 1e-6;
            for li in 0..m.layers.len() {
                for idx in [(0usize, 0usize), (1, 2), (2, 1)] {
                    if idx.0 >= m.layers[li].weights.nrows()
                        || idx.1 >= m.layers[li].weights.ncols()
                    {
                        continue;
                    }
                    let mut mp = m.clone();
                    mp.layers[li].weights[idx] += h;
                    let mut mm = m.clone();
                    mm.layers[li].weights[idx] -= h;
                    let fd = (l2_loss(&mp.forward(&x).unwrap(), &y)
                        - l2_loss(&mm.forward(&x).unwrap(), &y))
                        / (2.0 * h);
                    let an = grads[li].weights[idx];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                    worst = worst.max(rel);
                }
                let mut mp = m.clone();
                mp.layers[li].bias[0] += h;
                let mut mm = m.clone();
                mm.layers[li].bias[0] -= h;
                let fd = (l2_loss(&mp.forward(&x).unwrap(), &y)
                    - l2_loss(&mm.forward(&x).unwrap(), &y))
                    / (2.0 * h);
                let an = grads[li].bias[0];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec { kind: ModelKind::Linear, hidden: vec![3], dropout: 0.0, seed: 0 }
            .validate()
            .is_err());
        assert!(ModelSpec::mlp(vec![4], 1.0, 0).validate().is_err());
        assert!(ModelSpec::mlp(vec![0], 0.1, 0).validate().is_err());
        let m = Model::new(ModelSpec::linear(0), 3, 2).unwrap();
        let bad = DMatrix::zeros(4, 1);
        assert!(m.forward(&bad).is_err());
    }
}

use serde::{Deserialize, Serialize};

use super::{add_assign, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
}

/// Fully connected layer `y = act(W x + b)`, weights stored row-major
/// (`out_dim` rows of `in_dim`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        DenseLayer { in_dim, out_dim, weight: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim], activation }
    }

    pub fn zeros_like(&self) -> Self {
        DenseLayer::zeros(self.in_dim, self.out_dim, self.activation)
    }

    pub fn is_consistent(&self) -> bool {
        self.weight.len() == self.in_dim * self.out_dim && self.bias.len() == self.out_dim
    }

    /// Returns the post-activation output.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim, "dense input dimension mismatch");
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| {
                let z = b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
                match self.activation {
                    Activation::Identity => z,
                    Activation::Tanh => z.tanh(),
                }
            })
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    /// `y` is the output [`forward`](Self::forward) produced for `x`.
    pub fn backward(&self, x: &[f64], y: &[f64], dy: &[f64], grad: &mut DenseLayer) -> Vec<f64> {
        assert_eq!(dy.len(), self.out_dim, "dense output gradient dimension mismatch");
        let mut dx = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let dz = match self.activation {
                Activation::Identity => dy[o],
                Activation::Tanh => dy[o] * (1.0 - y[o] * y[o]),
            };
            if dz == 0.0 {
                continue;
            }
            grad.bias[o] += dz;
            let row = o * self.in_dim;
            for i in 0..self.in_dim {
                grad.weight[row + i] += dz * x[i];
                dx[i] += dz * self.weight[row + i];
            }
        }
        dx
    }

    pub fn accumulate(&mut self, other: &DenseLayer) {
        add_assign(&mut self.weight, &other.weight);
        add_assign(&mut self.bias, &other.bias);
    }
}

impl Parameters for DenseLayer {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check_gradients;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_by_hand() {
        let mut layer = DenseLayer::zeros(2, 1, Activation::Tanh);
        layer.weight = vec![0.5, -1.0];
        layer.bias = vec![0.25];
        let y = layer.forward(&[2.0, 1.0]);
        assert_abs_diff_eq!(y[0], 0.25f64.tanh(), epsilon = 1e-15);
    }

    #[test]
    fn backward_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = DenseLayer::zeros(3, 2, Activation::Tanh);
        layer.randomize(&mut rng, 1.0);
        let x = [0.3, -0.7, 1.1];
        let upstream = [0.9, -1.3];
        let loss = |l: &DenseLayer| l.forward(&x).iter().zip(&upstream).map(|(y, u)| y * u).sum::<f64>();

        let y = layer.forward(&x);
        let mut grad = layer.zeros_like();
        layer.backward(&x, &y, &upstream, &mut grad);

        let flat = layer.to_flat();
        let err = check_gradients(
            |p| {
                let mut l = layer.clone();
                l.set_flat(p);
                loss(&l)
            },
            &flat,
            &grad.to_flat(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "relative error {err}");
    }
}

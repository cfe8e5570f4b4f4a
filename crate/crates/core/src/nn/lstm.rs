use serde::{Deserialize, Serialize};

use super::{add_assign, sigmoid, Parameters};

/// Single LSTM cell. Gate blocks are stacked in the order input, forget,
/// candidate, output; each block has `hidden_dim` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `4 * hidden_dim` rows of `input_dim`.
    pub w_input: Vec<f64>,
    /// `4 * hidden_dim` rows of `hidden_dim`.
    pub w_hidden: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Activations of one forward step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub candidate: Vec<f64>,
    pub output_gate: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmCell {
            input_dim,
            hidden_dim,
            w_input: vec![0.0; 4 * hidden_dim * input_dim],
            w_hidden: vec![0.0; 4 * hidden_dim * hidden_dim],
            bias: vec![0.0; 4 * hidden_dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        LstmCell::zeros(self.input_dim, self.hidden_dim)
    }

    pub fn is_consistent(&self) -> bool {
        let d = self.hidden_dim;
        self.w_input.len() == 4 * d * self.input_dim && self.w_hidden.len() == 4 * d * d && self.bias.len() == 4 * d
    }

    pub fn step(&self, h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let cache = self.forward(h_prev, c_prev, x);
        (cache.h, cache.c)
    }

    pub fn forward(&self, h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> LstmStepCache {
        let d = self.hidden_dim;
        assert_eq!(x.len(), self.input_dim, "lstm input dimension mismatch");
        assert_eq!(h_prev.len(), d, "lstm hidden dimension mismatch");
        assert_eq!(c_prev.len(), d, "lstm cell dimension mismatch");

        let pre: Vec<f64> = (0..4 * d)
            .map(|r| {
                let wx = &self.w_input[r * self.input_dim..(r + 1) * self.input_dim];
                let wh = &self.w_hidden[r * d..(r + 1) * d];
                self.bias[r] + dot(wx, x) + dot(wh, h_prev)
            })
            .collect();

        let input_gate: Vec<f64> = pre[..d].iter().map(|&z| sigmoid(z)).collect();
        let forget_gate: Vec<f64> = pre[d..2 * d].iter().map(|&z| sigmoid(z)).collect();
        let candidate: Vec<f64> = pre[2 * d..3 * d].iter().map(|&z| z.tanh()).collect();
        let output_gate: Vec<f64> = pre[3 * d..].iter().map(|&z| sigmoid(z)).collect();

        let c: Vec<f64> = (0..d).map(|k| forget_gate[k] * c_prev[k] + input_gate[k] * candidate[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..d).map(|k| output_gate[k] * tanh_c[k]).collect();

        LstmStepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            input_gate,
            forget_gate,
            candidate,
            output_gate,
            c,
            tanh_c,
            h,
        }
    }

    /// Backward through one step given upstream `dh` and `dc`. Accumulates
    /// into `grad` and returns `(dx, dh_prev, dc_prev)`.
    pub fn backward(
        &self,
        cache: &LstmStepCache,
        dh: &[f64],
        dc: &[f64],
        grad: &mut LstmCell,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.hidden_dim;
        let mut dpre = vec![0.0; 4 * d];
        let mut dc_prev = vec![0.0; d];
        for k in 0..d {
            let o = cache.output_gate[k];
            let i = cache.input_gate[k];
            let f = cache.forget_gate[k];
            let g = cache.candidate[k];
            let tc = cache.tanh_c[k];

            let d_out = dh[k] * tc;
            let dc_total = dc[k] + dh[k] * o * (1.0 - tc * tc);
            dc_prev[k] = dc_total * f;

            dpre[k] = dc_total * g * i * (1.0 - i);
            dpre[d + k] = dc_total * cache.c_prev[k] * f * (1.0 - f);
            dpre[2 * d + k] = dc_total * i * (1.0 - g * g);
            dpre[3 * d + k] = d_out * o * (1.0 - o);
        }

        let mut dx = vec![0.0; self.input_dim];
        let mut dh_prev = vec![0.0; d];
        for (r, &dz) in dpre.iter().enumerate() {
            if dz == 0.0 {
                continue;
            }
            grad.bias[r] += dz;
            let wx = r * self.input_dim;
            for (j, &xj) in cache.x.iter().enumerate() {
                grad.w_input[wx + j] += dz * xj;
                dx[j] += dz * self.w_input[wx + j];
            }
            let wh = r * d;
            for (j, &hj) in cache.h_prev.iter().enumerate() {
                grad.w_hidden[wh + j] += dz * hj;
                dh_prev[j] += dz * self.w_hidden[wh + j];
            }
        }
        (dx, dh_prev, dc_prev)
    }

    pub fn accumulate(&mut self, other: &LstmCell) {
        add_assign(&mut self.w_input, &other.w_input);
        add_assign(&mut self.w_hidden, &other.w_hidden);
        add_assign(&mut self.bias, &other.bias);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Parameters for LstmCell {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(&self.w_input);
        f(&self.w_hidden);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.w_input);
        f(&mut self.w_hidden);
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
    fn zero_cell_outputs_zero() {
        let cell = LstmCell::zeros(3, 2);
        let (h, c) = cell.step(&[0.0; 2], &[0.0; 2], &[0.0; 3]);
        assert_eq!(h, vec![0.0; 2]);
        assert_eq!(c, vec![0.0; 2]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        // forget bias -> +inf, input bias -> -inf: c stays c_prev, h = sigmoid(0) * tanh(c_prev)
        let mut cell = LstmCell::zeros(1, 1);
        cell.bias = vec![-50.0, 50.0, 0.0, 0.0];
        let (h, c) = cell.step(&[0.0], &[0.8], &[1.0]);
        assert_abs_diff_eq!(c[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(h[0], 0.5 * 0.8f64.tanh(), epsilon = 1e-12);
    }

    #[test]
    fn single_unit_by_hand() {
        let mut cell = LstmCell::zeros(1, 1);
        cell.w_input = vec![0.5, -0.5, 1.0, 2.0];
        cell.w_hidden = vec![0.1, 0.2, 0.3, 0.4];
        cell.bias = vec![0.0, 1.0, -0.5, 0.0];
        let (x, h0, c0) = (1.0f64, 0.5f64, -0.2f64);
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let i = s(0.5 + 0.1 * h0);
        let f = s(-0.5 + 0.2 * h0 + 1.0);
        let g = (1.0 + 0.3 * h0 - 0.5).tanh();
        let o = s(2.0 + 0.4 * h0);
        let c = f * c0 + i * g;
        let h = o * c.tanh();
        let (hh, cc) = cell.step(&[h0], &[c0], &[x]);
        assert_abs_diff_eq!(cc[0], c, epsilon = 1e-14);
        assert_abs_diff_eq!(hh[0], h, epsilon = 1e-14);
    }

    #[test]
    fn unrolled_backward_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cell = LstmCell::zeros(2, 3);
        cell.randomize(&mut rng, 0.8);
        let xs = [[0.5, -1.0], [0.2, 0.3], [-0.7, 0.9]];
        let weights = [0.3, -1.1, 0.6];
        let loss = |cell: &LstmCell| {
            let (mut h, mut c) = (vec![0.0; 3], vec![0.0; 3]);
            for x in &xs {
                (h, c) = cell.step(&h, &c, x);
            }
            h.iter().zip(&weights).map(|(a, w)| a * w).sum::<f64>() + c.iter().sum::<f64>()
        };

        let mut caches = Vec::new();
        let (mut h, mut c) = (vec![0.0; 3], vec![0.0; 3]);
        for x in &xs {
            let cache = cell.forward(&h, &c, x);
            h = cache.h.clone();
            c = cache.c.clone();
            caches.push(cache);
        }
        let mut grad = cell.zeros_like();
        let mut dh = weights.to_vec();
        let mut dc = vec![1.0; 3];
        for cache in caches.iter().rev() {
            let (_, dhp, dcp) = cell.backward(cache, &dh, &dc, &mut grad);
            dh = dhp;
            dc = dcp;
        }

        let err = check_gradients(
            |p| {
                let mut c = cell.clone();
                c.set_flat(p);
                loss(&c)
            },
            &cell.to_flat(),
            &grad.to_flat(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }
}

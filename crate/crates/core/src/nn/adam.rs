use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment accumulators for Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        AdamState { config, m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 }
    }

    /// One bias-corrected Adam update in place.
    ///
    /// An all-zero gradient leaves both parameters and state untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter count does not match optimizer state");
        assert_eq!(grads.len(), self.m.len(), "gradient count does not match optimizer state");
        if grads.iter().all(|&g| g == 0.0) {
            return;
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut state = AdamState::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 0.5];
        state.step(&mut p, &[0.3, 0.1, -0.2]);
        let before = p.clone();
        state.step(&mut p, &[0.0; 3]);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        let mut state = AdamState::new(2, cfg);
        let mut p = vec![0.0, 0.0];
        state.step(&mut p, &[3.0, -0.5]);
        assert_abs_diff_eq!(p[0], -0.01, epsilon = 1e-9);
        assert_abs_diff_eq!(p[1], 0.01, epsilon = 1e-9);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn two_steps_on_quadratic_match_scalar_reference() {
        // f(w) = (w - 3)^2, hand-rolled scalar Adam as reference
        let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut state = AdamState::new(1, cfg);
        let mut w = [0.0];

        let (mut rw, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            let g = 2.0 * (w[0] - 3.0);
            state.step(&mut w, &[g]);

            let rg = 2.0 * (rw - 3.0);
            m = 0.9 * m + 0.1 * rg;
            v = 0.999 * v + 0.001 * rg * rg;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            rw -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert_abs_diff_eq!(w[0], rw, epsilon = 1e-14);
        // both steps head towards the minimum by roughly lr
        assert_abs_diff_eq!(w[0], 0.2, epsilon = 1e-3);
    }

    proptest! {
        #[test]
        fn zero_gradient_identity_any_state(
            grads in prop::collection::vec(-5.0f64..5.0, 4),
            params in prop::collection::vec(-5.0f64..5.0, 4),
            warmup in 0usize..5,
        ) {
            let mut state = AdamState::new(4, AdamConfig::default());
            let mut p = params.clone();
            for _ in 0..warmup {
                state.step(&mut p, &grads);
            }
            let snapshot = p.clone();
            state.step(&mut p, &[0.0; 4]);
            prop_assert_eq!(p, snapshot);
        }
    }
}

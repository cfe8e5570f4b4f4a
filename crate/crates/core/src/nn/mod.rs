//! Small hand-differentiated neural network kit.
//!
//! Every layer exposes a forward pass plus an explicit backward pass that
//! accumulates into a gradient value of the same type. Parameters are
//! visited in a fixed order so that models can be flattened for the
//! optimizer and the finite-difference checker.

mod adam;
mod dense;
mod gradcheck;
mod lstm;

pub use adam::{AdamConfig, AdamState};
pub use dense::{Activation, DenseLayer};
pub use gradcheck::{check_gradients, numeric_gradient};
pub use lstm::{LstmCell, LstmStepCache};

use rand::Rng;

use crate::types::GaussianParams;

/// Half-width of the uniform distribution used to initialize parameters.
pub const INIT_RANGE: f64 = 0.1;

/// Ordered access to every trainable parameter.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.len());
        n
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |p| out.extend_from_slice(p));
        out
    }

    /// Panics if `flat` does not have exactly `num_params()` entries.
    fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length mismatch");
        let mut offset = 0;
        self.visit_mut(&mut |p| {
            p.copy_from_slice(&flat[offset..offset + p.len()]);
            offset += p.len();
        });
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut(&mut |p| p.fill(value));
    }

    fn randomize<R: Rng + ?Sized>(&mut self, rng: &mut R, range: f64)
    where
        Self: Sized,
    {
        self.visit_mut(&mut |p| {
            for w in p.iter_mut() {
                *w = rng.random_range(-range..range);
            }
        });
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |p| ok &= p.iter().all(|w| w.is_finite()));
        ok
    }
}

/// `ln(1 + e^x)`, stable for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln N(x; mu, sigma)`.
pub fn gaussian_nll(x: f64, g: GaussianParams) -> f64 {
    let var = g.sigma * g.sigma;
    0.5 * (2.0 * std::f64::consts::PI * var).ln() + (x - g.mu).powi(2) / (2.0 * var)
}

/// Partial derivatives of [`gaussian_nll`] with respect to `(mu, sigma)`.
pub fn gaussian_nll_grad(x: f64, g: GaussianParams) -> (f64, f64) {
    let var = g.sigma * g.sigma;
    let diff = x - g.mu;
    (-diff / var, 1.0 / g.sigma - diff * diff / (var * g.sigma))
}

/// Maps a raw 2-vector head output to a Gaussian: `mu = v[0]`,
/// `sigma = max(softplus(v[1]), SIGMA_FLOOR)`.
pub fn gaussian_head(v: &[f64]) -> GaussianParams {
    GaussianParams::new(v[0], softplus(v[1]))
}

/// Backpropagates `(dmu, dsigma)` through [`gaussian_head`] into the raw head
/// output. The sigma floor has zero gradient when active.
pub fn gaussian_head_backward(v: &[f64], dmu: f64, dsigma: f64) -> [f64; 2] {
    let floored = softplus(v[1]) < crate::types::SIGMA_FLOOR;
    [dmu, if floored { 0.0 } else { dsigma * sigmoid(v[1]) }]
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn add_assign(acc: &mut [f64], other: &[f64]) {
    debug_assert_eq!(acc.len(), other.len());
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn softplus_examples() {
        assert_abs_diff_eq!(softplus(0.0), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(softplus(100.0), 100.0, epsilon = 1e-9);
        let tail = softplus(-100.0);
        assert!(tail > 0.0);
        assert_abs_diff_eq!(tail / (-100.0f64).exp(), 1.0, epsilon = 1e-12);
        assert!(softplus(1000.0).is_finite());
    }

    #[test]
    fn gaussian_nll_examples() {
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert_abs_diff_eq!(gaussian_nll(0.0, GaussianParams::new(0.0, 1.0)), 0.918939, epsilon = 1e-6);
        assert_abs_diff_eq!(gaussian_nll(0.0, GaussianParams::new(0.0, 1.0)), half_ln_2pi, epsilon = 1e-15);
        assert_abs_diff_eq!(
            gaussian_nll(1.5, GaussianParams::new(1.5, 2.0)),
            0.5 * (8.0 * std::f64::consts::PI).ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(gaussian_nll(1.5, GaussianParams::new(1.5, 2.0)), 1.612, epsilon = 1e-3);
        assert_abs_diff_eq!(gaussian_nll(3.0, GaussianParams::new(1.0, 1.0)), half_ln_2pi + 2.0, epsilon = 1e-12);
    }

    #[test]
    fn nll_grad_matches_differences() {
        let (x, mu, sigma) = (2.3, 0.7, 1.3);
        let (dmu, dsigma) = gaussian_nll_grad(x, GaussianParams::new(mu, sigma));
        let h = 1e-6;
        let nmu = (gaussian_nll(x, GaussianParams::new(mu + h, sigma))
            - gaussian_nll(x, GaussianParams::new(mu - h, sigma)))
            / (2.0 * h);
        let nsig = (gaussian_nll(x, GaussianParams::new(mu, sigma + h))
            - gaussian_nll(x, GaussianParams::new(mu, sigma - h)))
            / (2.0 * h);
        assert_abs_diff_eq!(dmu, nmu, epsilon = 1e-8);
        assert_abs_diff_eq!(dsigma, nsig, epsilon = 1e-8);
    }

    #[test]
    fn log_softmax_normalizes() {
        let lp = log_softmax(&[1.0, 2.0, -3.0, 800.0]);
        assert_abs_diff_eq!(logsumexp(&lp), 0.0, epsilon = 1e-12);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 2]), f64::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn softplus_positive_and_monotone(a in -700.0f64..700.0, b in -700.0f64..700.0) {
            prop_assert!(softplus(a) > 0.0);
            if a < b {
                prop_assert!(softplus(a) <= softplus(b));
            }
        }

        #[test]
        fn nll_bounded_below_by_mode(x in -20.0f64..20.0, mu in -20.0f64..20.0, sigma in 0.01f64..10.0) {
            let g = GaussianParams::new(mu, sigma);
            let var = sigma * sigma;
            let floor = 0.5 * (2.0 * std::f64::consts::PI * var).ln();
            prop_assert!(gaussian_nll(x, g) >= floor);
            prop_assert_eq!(gaussian_nll(mu, g), floor);
        }
    }
}

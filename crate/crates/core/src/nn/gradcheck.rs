use crate::error::{Error, Result};

/// Central-difference estimate of the gradient of `f` at `params`, using the
/// fourth-order stencil `(-f(+2h) + 8f(+h) - 8f(-h) + f(-2h)) / 12h`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, params: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut probe = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        let mut at = |offset: f64| -> Result<f64> {
            probe[i] = orig + offset;
            let value = f(&probe);
            if value.is_finite() {
                Ok(value)
            } else {
                Err(Error::NonFinite { index: i, value })
            }
        };
        let (p2, p1, m1, m2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
        probe[i] = orig;
        out.push((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h));
    }
    Ok(out)
}

/// Largest relative error between `analytic` and a central-difference
/// estimate, using `|a - n| / max(1e-8, |a| + |n|)` per parameter.
pub fn check_gradients(f: impl FnMut(&[f64]) -> f64, params: &[f64], analytic: &[f64], h: f64) -> Result<f64> {
    assert_eq!(params.len(), analytic.len(), "analytic gradient length mismatch");
    let numeric = numeric_gradient(f, params, h)?;
    Ok(analytic.iter().zip(&numeric).map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-8)).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square() {
        let err = check_gradients(|p| p[0] * p[0], &[3.0], &[6.0], 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn linear_is_exact() {
        let err = check_gradients(|p| 2.0 * p[0] - 0.5 * p[1] + 1.0, &[0.25, -0.5], &[2.0, -0.5], 1e-3).unwrap();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let err = check_gradients(|p| p[0] * p[0], &[3.0], &[5.0], 1e-5).unwrap();
        assert!(err > 0.05);
    }

    #[test]
    fn non_finite_is_reported() {
        let res = check_gradients(|p| p[0].ln(), &[0.0], &[1.0], 1e-5);
        assert!(matches!(res, Err(Error::NonFinite { index: 0, .. })));
    }
}

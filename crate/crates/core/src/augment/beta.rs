//! Beta(g, g) sampling as a ratio of two Gamma(g, 1) variates.
//!
//! Gamma variates come from Marsaglia-Tsang. Shapes below one use the
//! `G(a) = G(a + 1) * U^(1/a)` boost, carried out in log space so that very
//! small shapes (gradual weakening drives gamma towards zero) do not
//! underflow both variates to zero.

use alloc::format;

use crate::rng::RngStream;
use crate::{Error, Result};

/// Natural log of a Gamma(shape, 1) variate.
pub fn ln_gamma_variate(shape: f64, rng: &mut RngStream) -> f64 {
    if shape < 1.0 {
        let boost = libm::log(rng.uniform_open()) / shape;
        return ln_gamma_variate(shape + 1.0, rng) + boost;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / libm::sqrt(9.0 * d);
    loop {
        let x = rng.normal();
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = rng.uniform_open();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || libm::log(u) < 0.5 * x2 + d * (1.0 - v + libm::log(v)) {
            return libm::log(d * v);
        }
    }
}

/// Draws `lambda ~ Beta(gamma, gamma)`.
pub fn beta_sample(gamma: f64, rng: &mut RngStream) -> Result<f64> {
    if gamma.is_nan() || gamma <= 0.0 || !gamma.is_finite() {
        return Err(Error::Parameter(format!(
            "Beta concentration must be positive, got {gamma}"
        )));
    }
    let g1 = ln_gamma_variate(gamma, rng);
    let g2 = ln_gamma_variate(gamma, rng);
    // g1' / (g1' + g2') with g' = exp(g), written to avoid overflow.
    Ok(1.0 / (1.0 + libm::exp(g2 - g1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn draws(gamma: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = RngStream::new(seed);
        (0..n)
            .map(|_| beta_sample(gamma, &mut rng).unwrap())
            .collect()
    }

    #[test]
    fn rejects_nonpositive() {
        let mut rng = RngStream::new(0);
        assert!(beta_sample(0.0, &mut rng).is_err());
        assert!(beta_sample(-1.0, &mut rng).is_err());
        assert!(beta_sample(f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn tiny_gamma_stays_finite() {
        for x in draws(1e-3, 2000, 4) {
            assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn gamma_variate_mean() {
        // E[Gamma(a,1)] = a
        for &a in &[0.3, 1.0, 2.5] {
            let mut rng = RngStream::new(11);
            let n = 20_000;
            let mean = (0..n)
                .map(|_| libm::exp(ln_gamma_variate(a, &mut rng)))
                .sum::<f64>()
                / n as f64;
            assert!((mean - a).abs() < 0.05 * a.max(1.0), "a={a} mean={mean}");
        }
    }
}

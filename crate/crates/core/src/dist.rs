//! Scalar densities and samplers used by priors and generators.

use std::f64::consts::SQRT_2;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(x / SQRT_2))
}

pub fn normal_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean) * (x - mean) / var)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Inverse-gamma distribution with density `b^a / Γ(a) x^{-a-1} exp(-b/x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InvGamma {
    pub const fn new(shape: f64, scale: f64) -> Self {
        InvGamma { shape, scale }
    }

    pub fn is_valid(&self) -> bool {
        self.shape > 0.0 && self.scale > 0.0 && self.shape.is_finite() && self.scale.is_finite()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 || !x.is_finite() {
            return f64::NEG_INFINITY;
        }
        let (a, b) = (self.shape, self.scale);
        a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
    }

    /// Density of `log x` when `x` follows this distribution (Jacobian included).
    pub fn ln_pdf_log_scale(&self, log_x: f64) -> f64 {
        let (a, b) = (self.shape, self.scale);
        a * b.ln() - ln_gamma(a) - a * log_x - b * (-log_x).exp()
    }

    /// Mean, finite for `shape > 1`.
    pub fn mean(&self) -> f64 {
        self.scale / (self.shape - 1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = Gamma::new(self.shape, 1.0 / self.scale).expect("valid inverse-gamma");
        1.0 / g.sample(rng)
    }
}

/// N(0, 1) truncated to [-1, 1], the prior on correlation parameters.
pub struct TruncatedStdNormal;

impl TruncatedStdNormal {
    /// log(Φ(1) - Φ(-1)).
    pub fn ln_mass() -> f64 {
        (normal_cdf(1.0) - normal_cdf(-1.0)).ln()
    }

    pub fn ln_pdf(rho: f64) -> f64 {
        if !(-1.0..=1.0).contains(&rho) {
            return f64::NEG_INFINITY;
        }
        -0.5 * (LN_2PI + rho * rho) - Self::ln_mass()
    }

    /// Density of `atanh(rho)`.
    pub fn ln_pdf_atanh_scale(w: f64) -> f64 {
        let rho = w.tanh();
        // d rho / d w = 1 - tanh^2 w = sech^2 w
        let ln_jac = -2.0 * ln_cosh(w);
        Self::ln_pdf(rho) + ln_jac
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        loop {
            let z = standard_normal(rng);
            if z.abs() < 1.0 {
                return z;
            }
        }
    }
}

/// `ln(cosh(w))` without overflow for large `|w|`.
pub fn ln_cosh(w: f64) -> f64 {
    let a = w.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inv_gamma_log_scale_density_includes_jacobian() {
        let ig = InvGamma::new(3.0, 0.4);
        let x: f64 = 0.37;
        assert!((ig.ln_pdf_log_scale(x.ln()) - (ig.ln_pdf(x) + x.ln())).abs() < 1e-13);
    }

    #[test]
    fn inv_gamma_sample_mean() {
        let ig = InvGamma::new(3.0, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let m = (0..n).map(|_| ig.sample(&mut rng)).sum::<f64>() / n as f64;
        // variance b^2/((a-1)^2 (a-2)) = 0.04
        assert!((m - 0.2).abs() < 5.0 * (0.04f64 / n as f64).sqrt());
    }

    #[test]
    fn truncated_normal_integrates_to_one() {
        let k = 20_000;
        let h = 2.0 / k as f64;
        let total: f64 = (0..k)
            .map(|i| TruncatedStdNormal::ln_pdf(-1.0 + (i as f64 + 0.5) * h).exp() * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn ln_cosh_is_stable() {
        assert!((ln_cosh(0.3) - 0.3f64.cosh().ln()).abs() < 1e-15);
        assert!((ln_cosh(800.0) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn ln_gamma_reference_values() {
        assert!((ln_gamma(0.5) - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-13);
        assert!((ln_gamma(3.0) - 2f64.ln()).abs() < 1e-14);
        assert!((ln_gamma(503.5) - 2626.875_711_257_077).abs() < 1e-9);
    }
}

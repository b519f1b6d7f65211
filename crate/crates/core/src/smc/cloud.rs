use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::log_sum_exp;

/// Weighted particles on the sampling scale plus the tempering state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleCloud {
    pub particles: Vec<Vec<f64>>,
    /// Unnormalized log weights.
    pub log_weights: Vec<f64>,
    /// Cached prior and likelihood per particle (unused by plain MH targets).
    pub log_prior: Vec<f64>,
    pub log_lik: Vec<f64>,
    pub beta_temper: f64,
    pub log_z_increments: Vec<f64>,
    /// Tempering exponent reached at each stage.
    pub betas: Vec<f64>,
    /// ESS (after reweighting, before resampling) at each stage.
    pub ess_history: Vec<f64>,
    /// MH acceptance rate at each stage.
    pub acceptance: Vec<f64>,
    pub rng_seed: u64,
    pub stage: usize,
}

impl ParticleCloud {
    pub fn from_particles(particles: Vec<Vec<f64>>, rng_seed: u64) -> Self {
        let n = particles.len();
        ParticleCloud {
            particles,
            log_weights: vec![0.0; n],
            log_prior: vec![0.0; n],
            log_lik: vec![0.0; n],
            beta_temper: 0.0,
            log_z_increments: Vec::new(),
            betas: Vec::new(),
            ess_history: Vec::new(),
            acceptance: Vec::new(),
            rng_seed,
            stage: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles.first().map_or(0, Vec::len)
    }

    /// Normalized weights summing to one.
    pub fn weights(&self) -> Vec<f64> {
        normalized(&self.log_weights)
    }

    pub fn ess(&self) -> f64 {
        ess(&self.log_weights)
    }

    pub fn log_evidence(&self) -> f64 {
        self.log_z_increments.iter().sum()
    }

    /// Weighted mean and covariance of the particle coordinates.
    pub fn weighted_moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let w = self.weights();
        let k = self.dim();
        let mut mean = DVector::zeros(k);
        for (p, wi) in self.particles.iter().zip(&w) {
            mean.axpy(*wi, &DVector::from_column_slice(p), 1.0);
        }
        let mut cov = DMatrix::zeros(k, k);
        for (p, wi) in self.particles.iter().zip(&w) {
            let r = DVector::from_column_slice(p) - &mean;
            cov.ger(*wi, &r, &r, 1.0);
        }
        (mean, cov)
    }

    /// Systematic resampling; weights become uniform.
    pub fn resample(&mut self, rng: &mut ChaCha8Rng) {
        let idx = systematic_indices(&self.weights(), rng.random::<f64>());
        let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        self.particles = idx.iter().map(|&i| self.particles[i].clone()).collect();
        self.log_prior = pick(&self.log_prior);
        self.log_lik = pick(&self.log_lik);
        self.log_weights = vec![0.0; idx.len()];
    }
}

pub(crate) fn normalized(log_w: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(log_w.iter().copied());
    log_w.iter().map(|l| (l - lse).exp()).collect()
}

/// `1 / Σ w_i²` for normalized weights; 0 if every weight vanishes.
pub fn ess(log_w: &[f64]) -> f64 {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return 0.0;
    }
    let (s1, s2) = log_w.iter().fold((0.0, 0.0), |(a, b), &l| {
        let w = (l - max).exp();
        (a + w, b + w * w)
    });
    s1 * s1 / s2
}

/// Indices chosen by systematic resampling with offset `u ∈ [0, 1)`.
pub fn systematic_indices(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut i = 0;
    for k in 0..n {
        let target = (k as f64 + u) / n as f64;
        while i + 1 < n && cum + weights[i] <= target {
            cum += weights[i];
            i += 1;
        }
        out.push(i);
    }
    out
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for (run seed, stage, slot); slot `usize::MAX` is
/// the stage-level stream used for resampling.
pub(crate) fn stream(seed: u64, stage: usize, slot: usize) -> ChaCha8Rng {
    let k = splitmix64(splitmix64(seed ^ splitmix64(stage as u64)) ^ slot as u64);
    ChaCha8Rng::seed_from_u64(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ess_bounds() {
        assert!((ess(&[0.0; 10]) - 10.0).abs() < 1e-12);
        let lw = [0.0, f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert!((ess(&lw) - 1.0).abs() < 1e-12);
        assert_eq!(ess(&[f64::NEG_INFINITY; 2]), 0.0);
    }

    #[test]
    fn weights_sum_to_one() {
        let lw = [-1000.0, -1001.5, -999.2, -1003.0];
        let s: f64 = normalized(&lw).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn systematic_counts_are_within_one_of_expectation() {
        let w = [0.1, 0.25, 0.05, 0.6];
        let idx = systematic_indices(&w, 0.37);
        for (k, wk) in w.iter().enumerate() {
            let c = idx.iter().filter(|&&i| i == k).count() as f64;
            assert!((c - wk * 4.0).abs() < 1.0 + 1e-12);
        }
    }

    #[test]
    fn resampling_preserves_weighted_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4000;
        let particles: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>() * 4.0 - 2.0]).collect();
        let mut cloud = ParticleCloud::from_particles(particles, 0);
        cloud.log_weights = cloud.particles.iter().map(|p| -0.5 * (p[0] - 0.7).powi(2)).collect();
        let before = cloud.weighted_moments().0[0];
        cloud.resample(&mut rng);
        let after = cloud.weighted_moments().0[0];
        assert!((before - after).abs() < 5.0 / (n as f64).sqrt());
    }

    #[test]
    fn streams_differ_and_repeat() {
        let a: u64 = stream(1, 2, 3).random();
        let b: u64 = stream(1, 2, 4).random();
        let c: u64 = stream(1, 2, 3).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}

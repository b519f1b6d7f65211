use nalgebra::{DVector, DVectorView};
use rand_chacha::ChaCha8Rng;

use crate::dist::{standard_normal, InvGamma, TruncatedStdNormal, LN_2PI};
use crate::error::{Error, Result};
use crate::likelihood::{residual_sum_of_squares, IntegratedLikelihood, SufficientStats, ThetaPoint};
use crate::linalg::{self, Chol};
use crate::model::{EtaCovStructure, Family, ModelSpec};

/// A posterior on an unconstrained sampling scale, split into prior and
/// likelihood so it can be tempered.
pub trait Target: Sync {
    fn dim(&self) -> usize;
    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    /// Prior density on the sampling scale, Jacobians included.
    fn log_prior(&self, x: &[f64]) -> f64;
    /// `-inf` wherever the model is undefined.
    fn log_likelihood(&self, x: &[f64]) -> f64;
}

/// Priors of the variance coordinates: log-variances, then `atanh ρ`.
#[derive(Debug, Clone)]
pub(crate) struct VariancePrior {
    igs: Vec<InvGamma>,
    corr: bool,
}

impl VariancePrior {
    pub fn new(spec: &ModelSpec) -> Self {
        let mut igs = vec![spec.ig_y];
        match spec.family {
            Family::LinearModel | Family::LinearModelNig => {}
            Family::SimpleMultilevel | Family::GeneralMultilevel => {
                igs.extend(spec.ig_eta.iter().flatten().copied());
            }
        }
        VariancePrior {
            igs,
            corr: spec.samples_correlation(),
        }
    }

    pub fn dim(&self) -> usize {
        self.igs.len() + usize::from(self.corr)
    }

    pub fn log_density(&self, u: &[f64]) -> f64 {
        let mut lp: f64 = self.igs.iter().zip(u).map(|(ig, &v)| ig.ln_pdf_log_scale(v)).sum();
        if self.corr {
            lp += TruncatedStdNormal::ln_pdf_atanh_scale(u[self.igs.len()]);
        }
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut u: Vec<f64> = self.igs.iter().map(|ig| ig.sample(rng).ln()).collect();
        if self.corr {
            u.push(TruncatedStdNormal::sample(rng).atanh());
        }
        u
    }
}

/// Variance coordinates only; `β` and `η` are integrated analytically.
pub struct IntegratedTarget {
    il: IntegratedLikelihood,
    spec: ModelSpec,
    prior: VariancePrior,
}

impl IntegratedTarget {
    pub fn new(stats: &SufficientStats, spec: &ModelSpec) -> Result<Self> {
        Ok(IntegratedTarget {
            il: IntegratedLikelihood::new(stats, spec)?,
            spec: spec.clone(),
            prior: VariancePrior::new(spec),
        })
    }

    pub fn likelihood(&self) -> &IntegratedLikelihood {
        &self.il
    }

    pub fn theta(&self, x: &[f64]) -> ThetaPoint {
        ThetaPoint::from_unconstrained(&self.spec, x)
    }
}

impl Target for IntegratedTarget {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.prior.sample(rng)
    }

    fn log_prior(&self, x: &[f64]) -> f64 {
        self.prior.log_density(x)
    }

    fn log_likelihood(&self, x: &[f64]) -> f64 {
        match self.il.log_likelihood(&self.theta(x)) {
            Ok(v) if !v.is_nan() => v,
            _ => f64::NEG_INFINITY,
        }
    }
}

/// Every parameter sampled: `[β, η (group after group), variance coords]`.
pub struct FullTarget {
    stats: SufficientStats,
    spec: ModelSpec,
    prior: VariancePrior,
    beta_chol: Chol,
    beta_log_det: f64,
    /// Group-effect width per group (0, 1 or m).
    width: usize,
    structure: Option<EtaCovStructure>,
}

impl FullTarget {
    pub fn new(stats: &SufficientStats, spec: &ModelSpec) -> Result<Self> {
        let problems = crate::model::validate_spec(spec);
        if !problems.is_empty() {
            return Err(Error::InvalidSpec(problems));
        }
        if spec.d() != stats.d {
            return Err(Error::Dimension(format!(
                "prior mean length {} ≠ design width {}",
                spec.d(),
                stats.d
            )));
        }
        let width = match spec.family {
            Family::LinearModel | Family::LinearModelNig => 0,
            Family::SimpleMultilevel => 1,
            Family::GeneralMultilevel => {
                if spec.m() != stats.m {
                    return Err(Error::Dimension(format!(
                        "group covariance dimension {} ≠ group-varying width {}",
                        spec.m(),
                        stats.m
                    )));
                }
                spec.m()
            }
        };
        let beta_chol = linalg::cholesky(spec.prior_cov.clone(), "prior covariance Σ")?;
        Ok(FullTarget {
            stats: stats.clone(),
            spec: spec.clone(),
            prior: VariancePrior::new(spec),
            beta_log_det: linalg::log_det(&beta_chol),
            beta_chol,
            width,
            structure: spec.eta_structure.clone(),
        })
    }

    fn n_eta(&self) -> usize {
        self.width * self.stats.n_groups
    }

    /// Split a point into `(β, η flat, variance coords)`.
    pub fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let d = self.stats.d;
        let (beta, rest) = x.split_at(d);
        let (eta, var) = rest.split_at(self.n_eta());
        (beta, eta, var)
    }

    pub fn theta(&self, x: &[f64]) -> ThetaPoint {
        ThetaPoint::from_unconstrained(&self.spec, self.split(x).2)
    }

    /// Scale multiplying `Σ` in the prior on `β`.
    fn beta_scale(&self, s2: f64) -> f64 {
        match self.spec.family {
            Family::LinearModelNig => self.spec.nig_scale.unwrap_or(1.0) * s2,
            _ => 1.0,
        }
    }

    fn eta_factor(&self, theta: &ThetaPoint) -> Option<(Chol, f64)> {
        match self.spec.family {
            Family::SimpleMultilevel => {
                let e = theta.sigma2_eta?;
                let ch = linalg::cholesky(nalgebra::DMatrix::from_element(1, 1, e), "σ²_η").ok()?;
                Some((ch, e.ln()))
            }
            Family::GeneralMultilevel => {
                let nu = theta.nu.as_ref()?;
                let (_, ch) = self.structure.as_ref()?.assemble_factored(&nu.variances, nu.rho).ok()?;
                let ld = linalg::log_det(&ch);
                Some((ch, ld))
            }
            _ => None,
        }
    }
}

fn gaussian_ln_pdf_whitened(ch: &Chol, log_det: f64, r: DVector<f64>) -> f64 {
    let k = r.len() as f64;
    -0.5 * (k * LN_2PI + log_det + linalg::inv_quad(ch, &r))
}

impl Target for FullTarget {
    fn dim(&self) -> usize {
        self.stats.d + self.n_eta() + self.prior.dim()
    }

    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let var = self.prior.sample(rng);
        let theta = ThetaPoint::from_unconstrained(&self.spec, &var);
        let d = self.stats.d;
        let c = self.beta_scale(theta.sigma2_y).sqrt();
        let e = DVector::from_fn(d, |_, _| standard_normal(rng));
        let beta = &self.spec.prior_mean + self.beta_chol.l_dirty().lower_triangle() * e * c;
        let mut x: Vec<f64> = beta.iter().copied().collect();
        if self.width > 0 {
            match self.eta_factor(&theta) {
                Some((ch, _)) => {
                    let l = ch.l();
                    for _ in 0..self.stats.n_groups {
                        let e = DVector::from_fn(self.width, |_, _| standard_normal(rng));
                        x.extend((&l * e).iter());
                    }
                }
                // Variance draw outside the valid region; the prior density
                // there is zero so any placeholder is discarded by weighting.
                None => x.extend(std::iter::repeat_n(0.0, self.n_eta())),
            }
        }
        x.extend(var);
        x
    }

    fn log_prior(&self, x: &[f64]) -> f64 {
        let (beta, eta, var) = self.split(x);
        let mut lp = self.prior.log_density(var);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let theta = ThetaPoint::from_unconstrained(&self.spec, var);
        let c = self.beta_scale(theta.sigma2_y);
        let r = DVector::from_column_slice(beta) - &self.spec.prior_mean;
        let d = beta.len() as f64;
        lp += -0.5 * (d * LN_2PI + self.beta_log_det + d * c.ln() + linalg::inv_quad(&self.beta_chol, &r) / c);
        if self.width > 0 {
            let Some((ch, ld)) = self.eta_factor(&theta) else {
                return f64::NEG_INFINITY;
            };
            for chunk in eta.chunks(self.width) {
                lp += gaussian_ln_pdf_whitened(&ch, ld, DVectorView::from_slice(chunk, self.width).into_owned());
            }
        }
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }

    fn log_likelihood(&self, x: &[f64]) -> f64 {
        let (beta, eta, var) = self.split(x);
        let s2 = var[0].exp();
        if !(s2 > 0.0) || !s2.is_finite() {
            return f64::NEG_INFINITY;
        }
        let rss = residual_sum_of_squares(&self.stats, self.spec.family, beta, eta);
        let v = crate::likelihood::gaussian_log_density(self.stats.n, rss, s2);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::likelihood::{log_full_likelihood, FullParams};
    use crate::model::CorrPrior;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};

    fn grouped(n: usize, j: usize, m: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let z = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let g: Vec<usize> = (0..n).map(|i| i % j).collect();
        Dataset::new(y, x, z, g, (0..j).map(|k| k.to_string()).collect()).unwrap()
    }

    fn general_spec() -> ModelSpec {
        ModelSpec::general_multilevel(
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            InvGamma::new(3.0, 1.0),
            vec![InvGamma::new(3.0, 1.0); 2],
            vec![(0, 1)],
            Some(CorrPrior::TruncatedNormal),
        )
    }

    #[test]
    fn full_likelihood_matches_row_by_row() {
        let data = grouped(12, 3, 2, 1);
        let stats = SufficientStats::precompute(&data);
        let t = FullTarget::new(&stats, &general_spec()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = t.sample_prior(&mut rng);
            assert_eq!(x.len(), t.dim());
            let (beta, eta, _) = t.split(&x);
            let p = FullParams {
                beta: DVector::from_column_slice(beta),
                eta: eta.chunks(2).map(DVector::from_column_slice).collect(),
                theta: t.theta(&x),
            };
            let want = log_full_likelihood(&stats, Family::GeneralMultilevel, &p).unwrap();
            assert!((t.log_likelihood(&x) - want).abs() < 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn full_prior_is_a_density_in_beta() {
        // One-dimensional β with σ² fixed by a point mass-like evaluation:
        // integrating exp(log_prior) over β at fixed log σ² recovers the
        // variance prior density.
        let data = Dataset::ungrouped(DVector::from_vec(vec![0.3]), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let stats = SufficientStats::precompute(&data);
        let spec = ModelSpec::nig(DVector::from_vec(vec![0.4]), DMatrix::from_element(1, 1, 2.0), InvGamma::new(3.0, 0.5), 3.0);
        let t = FullTarget::new(&stats, &spec).unwrap();
        let u = -0.7;
        let h = 1e-3;
        let total: f64 = (0..40_000).map(|k| (t.log_prior(&[-20.0 + k as f64 * h, u])).exp() * h).sum();
        let want = spec.ig_y.ln_pdf_log_scale(u).exp();
        assert!((total - want).abs() < 1e-9, "{total} vs {want}");
    }

    #[test]
    fn integrated_target_rejects_invalid_points() {
        let data = grouped(8, 2, 2, 2);
        let stats = SufficientStats::precompute(&data);
        let t = IntegratedTarget::new(&stats, &general_spec()).unwrap();
        assert_eq!(t.dim(), 4);
        assert!(t.log_likelihood(&[0.0, 0.0, 0.0, 0.3]).is_finite());
        assert_eq!(t.log_prior(&[0.0, f64::NAN, 0.0, 0.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn prior_samples_have_finite_density() {
        let data = grouped(10, 2, 2, 3);
        let stats = SufficientStats::precompute(&data);
        let spec = general_spec();
        let ti = IntegratedTarget::new(&stats, &spec).unwrap();
        let tf = FullTarget::new(&stats, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            assert!(ti.log_prior(&ti.sample_prior(&mut rng)).is_finite());
            assert!(tf.log_prior(&tf.sample_prior(&mut rng)).is_finite());
        }
    }
}

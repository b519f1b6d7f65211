//! Closed-form posterior and evidence for the normal-inverse-gamma linear model.

use nalgebra::{DMatrix, DVector};

use crate::dist::{ln_gamma, LN_2PI};
use crate::error::{Error, Result};
use crate::likelihood::SufficientStats;
use crate::linalg;
use crate::model::{Family, ModelSpec};

/// `NIG(a', b', μ̂, Σ̂)`: `β | σ² ~ N(μ̂, σ²Σ̂)`, `σ² ~ IG(a', b')`.
#[derive(Debug, Clone, PartialEq)]
pub struct NigPosterior {
    pub shape: f64,
    pub scale: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `log|Σ̂^{-1}| + log|γΣ|`, kept for the evidence.
    log_det_ratio: f64,
}

/// Posterior under `β | σ² ~ N(μ, σ²γΣ)`, `σ² ~ IG(a, b)`.
///
/// For a nonzero prior mean the scale is
/// `b' = b + (Σy² + μ'(γΣ)^{-1}μ - μ̂'Σ̂^{-1}μ̂) / 2` with
/// `μ̂ = Σ̂((γΣ)^{-1}μ + Σxy)`; at `μ = 0` this is the familiar
/// `b + (Σy² - μ̂'Σ̂^{-1}μ̂) / 2`.
pub fn nig_posterior(stats: &SufficientStats, spec: &ModelSpec) -> Result<NigPosterior> {
    if spec.family != Family::LinearModelNig {
        return Err(Error::Domain(format!(
            "closed-form evidence needs the normal-inverse-gamma family, got {:?}",
            spec.family
        )));
    }
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
    let gamma = spec.nig_scale.expect("validated");
    let sigma_n = &spec.prior_cov * gamma;
    let prior = linalg::cholesky(sigma_n, "prior covariance γΣ")?;
    let mut prior_inv = prior.inverse();
    linalg::symmetrize(&mut prior_inv);
    let mut prec = prior_inv + &stats.gram_xx;
    linalg::symmetrize(&mut prec);
    let h = prior.solve(&spec.prior_mean) + &stats.sum_xy;
    let post = linalg::cholesky(prec, "posterior precision Σ̂^{-1}")?;
    let mean = post.solve(&h);
    let mut cov = post.inverse();
    linalg::symmetrize(&mut cov);
    let resid = stats.sum_yy + linalg::inv_quad(&prior, &spec.prior_mean) - linalg::inv_quad(&post, &h);
    Ok(NigPosterior {
        shape: spec.ig_y.shape + stats.n as f64 / 2.0,
        scale: spec.ig_y.scale + 0.5 * resid.max(0.0),
        mean,
        cov,
        log_det_ratio: linalg::log_det(&post) + linalg::log_det(&prior),
    })
}

/// Exact log evidence of the normal-inverse-gamma linear model.
pub fn nig_log_evidence(stats: &SufficientStats, spec: &ModelSpec) -> Result<f64> {
    let post = nig_posterior(stats, spec)?;
    let (a, b) = (spec.ig_y.shape, spec.ig_y.scale);
    let n = stats.n as f64;
    Ok(-0.5
        * (post.log_det_ratio + n * LN_2PI - 2.0 * a * b.ln() + (2.0 * a + n) * post.scale.ln()
            - 2.0 * ln_gamma(n / 2.0 + a)
            + 2.0 * ln_gamma(a)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::dist::InvGamma;

    fn stats(y: &[f64], x: DMatrix<f64>) -> SufficientStats {
        SufficientStats::precompute(&Dataset::ungrouped(DVector::from_column_slice(y), x).unwrap())
    }

    fn one(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn hand_computed_posterior() {
        let s = stats(&[1.0], one(1.0));
        let spec = ModelSpec::nig(DVector::zeros(1), one(1.0), InvGamma::new(1.0, 1.0), 1.0);
        let p = nig_posterior(&s, &spec).unwrap();
        assert!((p.cov[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((p.mean[0] - 0.5).abs() < 1e-15);
        assert_eq!(p.shape, 1.5);
        assert!((p.scale - 1.25).abs() < 1e-15);
    }

    #[test]
    fn no_data_returns_prior() {
        let s = SufficientStats::precompute(
            &Dataset::new(DVector::zeros(0), DMatrix::zeros(0, 2), DMatrix::zeros(0, 0), vec![], vec![]).unwrap(),
        );
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let spec = ModelSpec::nig(DVector::zeros(2), sigma.clone(), InvGamma::new(3.0, 0.4), 1.0);
        let p = nig_posterior(&s, &spec).unwrap();
        assert_eq!((p.shape, p.scale), (3.0, 0.4));
        assert!(p.mean.amax() < 1e-15);
        assert!((p.cov - sigma).amax() < 1e-14);
        assert!(nig_log_evidence(&s, &spec).unwrap().abs() < 1e-13);
    }

    #[test]
    fn scale_never_decreases() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.random_range(1..8);
            let d = rng.random_range(1..4);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
            let mu = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let spec = ModelSpec::nig(mu, DMatrix::identity(d, d) * rng.random_range(0.1..5.0), InvGamma::new(2.0, 0.7), rng.random_range(0.5..5.0));
            let p = nig_posterior(&stats(&y, x), &spec).unwrap();
            assert!(p.scale >= 0.7);
            assert!(p.shape > 2.0);
        }
    }

    #[test]
    fn wrong_family_is_rejected() {
        let s = stats(&[1.0], one(1.0));
        let spec = ModelSpec::linear(DVector::zeros(1), one(1.0), InvGamma::new(1.0, 1.0));
        assert!(nig_log_evidence(&s, &spec).is_err());
    }
}

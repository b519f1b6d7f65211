use nalgebra::{DMatrix, DVector};

use super::spectral::Spectral;
use super::{SufficientStats, ThetaPoint};
use crate::dist::LN_2PI;
use crate::error::{Error, Result};
use crate::linalg::{self, Chol};
use crate::model::{EtaCovStructure, Family, ModelSpec};

/// Gaussian prior `N(μ, Σ)` with the pieces every evaluator reuses.
#[derive(Debug, Clone)]
pub(crate) struct GaussianPrior {
    pub mu: DVector<f64>,
    pub chol: Chol,
    pub log_det: f64,
    pub inv: DMatrix<f64>,
    pub inv_mu: DVector<f64>,
    /// `μ' Σ^{-1} μ`
    pub mu_q: f64,
}

impl GaussianPrior {
    pub fn new(mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != mu.len() {
            return Err(Error::Dimension(format!(
                "prior mean has length {} but covariance is {}x{}",
                mu.len(),
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let chol = linalg::cholesky(sigma.clone(), "prior covariance Σ")?;
        let mut inv = chol.inverse();
        linalg::symmetrize(&mut inv);
        let inv_mu = chol.solve(mu);
        Ok(GaussianPrior {
            mu: mu.clone(),
            log_det: linalg::log_det(&chol),
            mu_q: linalg::inv_quad(&chol, mu),
            chol,
            inv,
            inv_mu,
        })
    }
}

/// Conditional posterior of `β` given the variance parameters, with `η`
/// integrated out for multilevel families.
#[derive(Debug, Clone)]
pub struct BetaConditional {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Prepared evaluator for one (dataset, model) pair.
///
/// Everything that does not depend on the variance parameters is computed in
/// [`IntegratedLikelihood::new`]. For the linear model the default route uses
/// an eigendecomposition of the whitened Gram matrix so each evaluation is
/// O(d); [`IntegratedLikelihood::log_likelihood_reference`] always takes the
/// Cholesky route.
#[derive(Debug, Clone)]
pub struct IntegratedLikelihood {
    family: Family,
    stats: SufficientStats,
    prior: GaussianPrior,
    structure: Option<EtaCovStructure>,
    spectral: Option<Spectral>,
    nig: Option<NigConstants>,
}

#[derive(Debug, Clone)]
struct NigConstants {
    /// `log|Σ̂^{-1}| + log|γΣ|`
    log_det_sum: f64,
    /// `μ'(γΣ)^{-1}μ + Σy² - μ̂'Σ̂^{-1}μ̂`, i.e. `2(b' - b)`.
    resid: f64,
    mean: DVector<f64>,
    /// `Σ̂ = ((γΣ)^{-1} + Σxx')^{-1}`
    cov: DMatrix<f64>,
}

impl IntegratedLikelihood {
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
        if spec.family == Family::GeneralMultilevel && spec.m() != stats.m {
            return Err(Error::Dimension(format!(
                "group covariance dimension {} ≠ group-varying width {}",
                spec.m(),
                stats.m
            )));
        }
        let prior = GaussianPrior::new(&spec.prior_mean, &spec.prior_cov)?;
        // The low-rank group route pays off while groups are fewer than
        // coefficients; otherwise the direct d x d factorization is cheaper.
        let spectral = match spec.family {
            Family::LinearModel => Some(Spectral::new(stats, &prior, false)),
            Family::SimpleMultilevel if stats.n_groups < stats.d => Some(Spectral::new(stats, &prior, true)),
            _ => None,
        };
        let nig = match spec.family {
            Family::LinearModelNig => Some(nig_constants(
                stats,
                &prior,
                spec.nig_scale.expect("validated"),
            )?),
            _ => None,
        };
        Ok(IntegratedLikelihood {
            family: spec.family,
            stats: stats.clone(),
            prior,
            structure: match spec.family {
                Family::GeneralMultilevel => spec.eta_structure.clone(),
                Family::SimpleMultilevel => Some(EtaCovStructure::diagonal(1)),
                _ => None,
            },
            spectral,
            nig,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn stats(&self) -> &SufficientStats {
        &self.stats
    }

    fn m(&self) -> usize {
        self.structure.as_ref().map_or(0, |s| s.m)
    }

    /// Log integrated likelihood at `theta`. Errors mark points of zero
    /// density (for example a `Σ_η` that is not positive definite).
    pub fn log_likelihood(&self, theta: &ThetaPoint) -> Result<f64> {
        theta.check(self.family, self.m())?;
        if self.stats.n == 0 {
            return Ok(0.0);
        }
        match self.family {
            Family::LinearModel => Ok(self
                .spectral
                .as_ref()
                .expect("built for linear models")
                .log_integrated(self.stats.n, self.stats.sum_yy, self.prior.mu_q, theta.sigma2_y)),
            Family::SimpleMultilevel if self.spectral.as_ref().is_some_and(Spectral::has_groups) => {
                self.spectral.as_ref().expect("checked").log_integrated_groups(
                    self.stats.n,
                    self.stats.sum_yy,
                    self.prior.mu_q,
                    theta.sigma2_y,
                    theta.sigma2_eta.expect("checked"),
                )
            }
            _ => self.log_likelihood_reference(theta),
        }
    }

    /// Cholesky evaluation of the same quantity as [`Self::log_likelihood`].
    pub fn log_likelihood_reference(&self, theta: &ThetaPoint) -> Result<f64> {
        theta.check(self.family, self.m())?;
        if self.stats.n == 0 {
            return Ok(0.0);
        }
        let s = &self.stats;
        match self.family {
            Family::LinearModel => {
                let (val, _) = lm_core(s, &self.prior, theta.sigma2_y, None)?;
                Ok(val)
            }
            Family::LinearModelNig => {
                let c = self.nig.as_ref().expect("built for NIG");
                let s2 = theta.sigma2_y;
                Ok(-0.5 * (c.log_det_sum + s.n as f64 * (LN_2PI + s2.ln()) + c.resid / s2))
            }
            Family::SimpleMultilevel => {
                let s2e = theta.sigma2_eta.expect("checked");
                let (val, _) = lm_core(s, &self.prior, theta.sigma2_y, Some(s2e))?;
                Ok(val)
            }
            Family::GeneralMultilevel => {
                let (val, _) = self.general_core(theta)?;
                Ok(val)
            }
        }
    }

    /// `N(μ̃, Σ̃)` of `β` given `theta`.
    pub fn beta_conditional(&self, theta: &ThetaPoint) -> Result<BetaConditional> {
        theta.check(self.family, self.m())?;
        let s2 = theta.sigma2_y;
        if let Some(c) = &self.nig {
            return Ok(BetaConditional {
                mean: c.mean.clone(),
                cov: &c.cov * s2,
            });
        }
        let parts = match self.family {
            Family::LinearModel => lm_core(&self.stats, &self.prior, s2, None)?.1,
            Family::SimpleMultilevel => {
                lm_core(&self.stats, &self.prior, s2, theta.sigma2_eta)?.1
            }
            _ => self.general_core(theta)?.1,
        };
        Ok(parts.conditional())
    }

    /// Mean and variance of the linear predictor `x'β + z'η_j` given `theta`,
    /// with `β` and `η_j` drawn from their joint conditional posterior.
    ///
    /// For the simple family `z` is ignored and taken as the scalar 1.
    pub fn linear_predictor_moments(
        &self,
        theta: &ThetaPoint,
        x: &DVector<f64>,
        z: &DVector<f64>,
        group: usize,
    ) -> Result<(f64, f64)> {
        let beta = self.beta_conditional(theta)?;
        self.linear_predictor_moments_given(theta, &beta, x, z, group)
    }

    /// [`Self::linear_predictor_moments`] with the conditional of `β` at
    /// `theta` already computed, for many predictions at one point.
    pub fn linear_predictor_moments_given(
        &self,
        theta: &ThetaPoint,
        beta: &BetaConditional,
        x: &DVector<f64>,
        z: &DVector<f64>,
        group: usize,
    ) -> Result<(f64, f64)> {
        let plain = || {
            let mean = x.dot(&beta.mean);
            let var = (x.transpose() * &beta.cov * x)[(0, 0)];
            (mean, var.max(0.0))
        };
        let s2 = theta.sigma2_y;
        let (gzz, cxz, szy, sigma_eta, z) = match self.family {
            Family::LinearModel | Family::LinearModelNig => return Ok(plain()),
            Family::SimpleMultilevel => {
                let e = theta.sigma2_eta.expect("checked");
                if e == 0.0 {
                    return Ok(plain());
                }
                let s = &self.stats;
                (
                    DMatrix::from_element(1, 1, s.n_per_group[group] as f64),
                    DMatrix::from_column_slice(s.d, 1, s.group_sum_x[group].as_slice()),
                    DVector::from_element(1, s.group_sum_y[group]),
                    DMatrix::from_element(1, 1, e),
                    DVector::from_element(1, 1.0),
                )
            }
            Family::GeneralMultilevel => {
                let nu = theta.nu.as_ref().expect("checked");
                let st = self.structure.as_ref().expect("general has structure");
                let s = &self.stats;
                (
                    s.group_gram_zz[group].clone(),
                    s.group_cross_xz[group].clone(),
                    s.group_sum_zy[group].clone(),
                    st.assemble(&nu.variances, nu.rho)?,
                    z.clone(),
                )
            }
        };
        let eta_inv = linalg::cholesky(sigma_eta, "group covariance Σ_η")?.inverse();
        let a = linalg::cholesky(eta_inv + gzz / s2, "group posterior precision")?;
        // η_j | β = A^{-1}(szy - Cxz'β)/σ² + N(0, A^{-1})
        let b = a.solve(&cxz.transpose()) / s2;
        let u = x - b.transpose() * &z;
        let a_inv_z = a.solve(&z);
        let mean = u.dot(&beta.mean) + a_inv_z.dot(&szy) / s2;
        let var = (u.transpose() * &beta.cov * &u)[(0, 0)] + z.dot(&a_inv_z);
        Ok((mean, var.max(0.0)))
    }

    fn general_core(&self, theta: &ThetaPoint) -> Result<(f64, PrecisionParts)> {
        let s = &self.stats;
        let nu = theta.nu.as_ref().expect("checked");
        let st = self.structure.as_ref().expect("general has structure");
        let (_, eta_chol) = st.assemble_factored(&nu.variances, nu.rho)?;
        let log_det_eta = linalg::log_det(&eta_chol);
        let eta_inv = eta_chol.inverse();
        let s2 = theta.sigma2_y;
        let s4 = s2 * s2;
        let d = s.d;

        // Whitened corrections of every group stacked side by side, so the
        // d x d update is a single matrix product.
        let m = st.m;
        let mut wt = DMatrix::zeros(d, s.n_groups * m);
        let mut v_all = DVector::zeros(s.n_groups * m);
        let mut log_det_a = 0.0;
        for j in 0..s.n_groups {
            let a = &eta_inv + &s.group_gram_zz[j] / s2;
            let ch = linalg::cholesky(a, "group posterior precision")?;
            log_det_a += linalg::log_det(&ch);
            let w = linalg::whiten_mat(&ch, &s.group_cross_xz[j].transpose());
            wt.columns_mut(j * m, m).copy_from(&w.transpose());
            v_all.rows_mut(j * m, m).copy_from(&linalg::whiten(&ch, &s.group_sum_zy[j]));
        }
        let corr_c = v_all.norm_squared();
        let mut p = &self.prior.inv + &s.gram_xx / s2;
        p.gemm(-1.0 / s4, &wt, &wt.transpose(), 1.0);
        linalg::symmetrize(&mut p);
        let mut h = &self.prior.inv_mu + &s.sum_xy / s2;
        h.gemv(-1.0 / s4, &wt, &v_all, 1.0);
        let c = s.sum_yy / s2 - corr_c / s4;
        let p_chol = linalg::cholesky(p, "posterior precision of β")?;
        let quad = linalg::inv_quad(&p_chol, &h);
        let val = -0.5
            * (linalg::log_det(&p_chol)
                + self.prior.log_det
                + s.n as f64 * (LN_2PI + s2.ln())
                + s.n_groups as f64 * log_det_eta
                + log_det_a
                + self.prior.mu_q
                + c
                - quad);
        Ok((val, PrecisionParts { chol: p_chol, h }))
    }
}

struct PrecisionParts {
    chol: Chol,
    h: DVector<f64>,
}

impl PrecisionParts {
    fn conditional(self) -> BetaConditional {
        let mean = self.chol.solve(&self.h);
        let mut cov = self.chol.inverse();
        linalg::symmetrize(&mut cov);
        BetaConditional { mean, cov }
    }
}

/// Linear-model integrated likelihood, optionally with scalar group
/// intercepts of variance `s2e` integrated out as well.
///
/// With `s2e` absent or exactly zero the group corrections are skipped, so
/// the simple multilevel value at `σ²_η = 0` equals the linear-model value
/// bit for bit.
fn lm_core(
    s: &SufficientStats,
    prior: &GaussianPrior,
    s2: f64,
    s2e: Option<f64>,
) -> Result<(f64, PrecisionParts)> {
    let n = s.n as f64;
    let group = s2e.filter(|&e| e > 0.0);
    let (gram, xy, yy, extra) = match group {
        None => (None, None, s.sum_yy, 0.0),
        Some(e) => {
            let mut gram = s.gram_xx.clone();
            let mut xy = s.sum_xy.clone();
            let mut yy = s.sum_yy;
            let mut extra = 0.0;
            for j in 0..s.n_groups {
                let nj = s.n_per_group[j] as f64;
                let w = e / (s2 + nj * e);
                let sx = &s.group_sum_x[j];
                let sy = s.group_sum_y[j];
                gram.ger(-w, sx, sx, 1.0);
                xy.axpy(-w * sy, sx, 1.0);
                yy -= w * sy * sy;
                extra += (nj * e / s2).ln_1p();
            }
            (Some(gram), Some(xy), yy, extra)
        }
    };
    let gram = gram.as_ref().unwrap_or(&s.gram_xx);
    let xy = xy.as_ref().unwrap_or(&s.sum_xy);
    let mut p = &prior.inv + gram / s2;
    linalg::symmetrize(&mut p);
    let h = &prior.inv_mu + xy / s2;
    let p_chol = linalg::cholesky(p, "posterior precision of β")?;
    let quad = linalg::inv_quad(&p_chol, &h);
    let val = -0.5
        * (linalg::log_det(&p_chol)
            + prior.log_det
            + n * (LN_2PI + s2.ln())
            + extra
            + prior.mu_q
            + yy / s2
            - quad);
    Ok((val, PrecisionParts { chol: p_chol, h }))
}

fn nig_constants(s: &SufficientStats, prior: &GaussianPrior, gamma: f64) -> Result<NigConstants> {
    let d = s.d as f64;
    // Σ_N = γΣ
    let inv_n = &prior.inv / gamma;
    let mut prec = inv_n + &s.gram_xx;
    linalg::symmetrize(&mut prec);
    let h = &prior.inv_mu / gamma + &s.sum_xy;
    let ch = linalg::cholesky(prec, "NIG posterior precision")?;
    let log_det_sum = linalg::log_det(&ch) + prior.log_det + d * gamma.ln();
    let resid = prior.mu_q / gamma + s.sum_yy - linalg::inv_quad(&ch, &h);
    let mean = ch.solve(&h);
    let mut cov = ch.inverse();
    linalg::symmetrize(&mut cov);
    Ok(NigConstants {
        log_det_sum,
        resid: resid.max(0.0),
        mean,
        cov,
    })
}

fn require(spec: &ModelSpec, family: Family) -> Result<()> {
    if spec.family == family {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "evaluator for {family:?} called with a {:?} spec",
            spec.family
        )))
    }
}

/// Log integrated likelihood of the linear model at `σ²` (Cholesky route).
pub fn log_integrated_lm(stats: &SufficientStats, spec: &ModelSpec, sigma2: f64) -> Result<f64> {
    require(spec, Family::LinearModel)?;
    IntegratedLikelihood::new(stats, spec)?.log_likelihood_reference(&ThetaPoint::lm(sigma2))
}

/// Log integrated likelihood of the NIG linear model conditional on `σ²`.
pub fn log_integrated_nig_conditional(
    stats: &SufficientStats,
    spec: &ModelSpec,
    sigma2: f64,
) -> Result<f64> {
    require(spec, Family::LinearModelNig)?;
    IntegratedLikelihood::new(stats, spec)?.log_likelihood_reference(&ThetaPoint::lm(sigma2))
}

pub fn log_integrated_simple_ml(
    stats: &SufficientStats,
    spec: &ModelSpec,
    sigma2_y: f64,
    sigma2_eta: f64,
) -> Result<f64> {
    require(spec, Family::SimpleMultilevel)?;
    IntegratedLikelihood::new(stats, spec)?
        .log_likelihood_reference(&ThetaPoint::simple(sigma2_y, sigma2_eta))
}

pub fn log_integrated_general_ml(
    stats: &SufficientStats,
    spec: &ModelSpec,
    theta: &ThetaPoint,
) -> Result<f64> {
    require(spec, Family::GeneralMultilevel)?;
    IntegratedLikelihood::new(stats, spec)?.log_likelihood_reference(theta)
}

//! Sufficient statistics, integrated likelihoods and the full likelihood.

mod full;
mod integrated;
mod spectral;
mod stats;

pub use full::{log_full_likelihood, residual_sum_of_squares, FullParams};
pub use integrated::{
    log_integrated_general_ml, log_integrated_lm, log_integrated_nig_conditional,
    log_integrated_simple_ml, BetaConditional, IntegratedLikelihood,
};
pub use stats::SufficientStats;
pub(crate) use full::gaussian_log_density;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Family, ModelSpec};

/// Group covariance parameters: diagonal variances and the correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nu {
    pub variances: Vec<f64>,
    pub rho: f64,
}

/// A point in variance space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaPoint {
    /// `σ²` for linear models, `σ²_y` for multilevel ones.
    pub sigma2_y: f64,
    pub sigma2_eta: Option<f64>,
    pub nu: Option<Nu>,
}

impl ThetaPoint {
    pub fn lm(sigma2: f64) -> Self {
        ThetaPoint {
            sigma2_y: sigma2,
            sigma2_eta: None,
            nu: None,
        }
    }

    pub fn simple(sigma2_y: f64, sigma2_eta: f64) -> Self {
        ThetaPoint {
            sigma2_eta: Some(sigma2_eta),
            ..ThetaPoint::lm(sigma2_y)
        }
    }

    pub fn general(sigma2_y: f64, variances: Vec<f64>, rho: f64) -> Self {
        ThetaPoint {
            nu: Some(Nu { variances, rho }),
            ..ThetaPoint::lm(sigma2_y)
        }
    }

    /// Map from the sampling scale (log-variances, then `atanh ρ` if sampled).
    pub fn from_unconstrained(spec: &ModelSpec, u: &[f64]) -> Self {
        let s2 = u[0].exp();
        match spec.family {
            Family::LinearModel | Family::LinearModelNig => ThetaPoint::lm(s2),
            Family::SimpleMultilevel => ThetaPoint::simple(s2, u[1].exp()),
            Family::GeneralMultilevel => {
                let m = spec.m();
                let vars = u[1..=m].iter().map(|v| v.exp()).collect();
                let rho = if spec.samples_correlation() {
                    u[m + 1].tanh()
                } else {
                    spec.fixed_rho()
                };
                ThetaPoint::general(s2, vars, rho)
            }
        }
    }

    pub fn to_unconstrained(&self, spec: &ModelSpec) -> Vec<f64> {
        let mut u = vec![self.sigma2_y.ln()];
        if let Some(e) = self.sigma2_eta {
            u.push(e.ln());
        }
        if let Some(nu) = &self.nu {
            u.extend(nu.variances.iter().map(|v| v.ln()));
            if spec.samples_correlation() {
                u.push(nu.rho.atanh());
            }
        }
        u
    }

    pub(crate) fn check(&self, family: Family, m: usize) -> Result<()> {
        if !(self.sigma2_y > 0.0) || !self.sigma2_y.is_finite() {
            return Err(Error::Domain(format!("σ² must be positive, got {}", self.sigma2_y)));
        }
        match family {
            Family::LinearModel | Family::LinearModelNig => Ok(()),
            Family::SimpleMultilevel => match self.sigma2_eta {
                Some(e) if e >= 0.0 && e.is_finite() => Ok(()),
                Some(e) => Err(Error::Domain(format!("σ²_η must be nonnegative, got {e}"))),
                None => Err(Error::Domain("simple multilevel needs σ²_η".into())),
            },
            Family::GeneralMultilevel => match &self.nu {
                Some(nu) if nu.variances.len() == m => Ok(()),
                Some(nu) => Err(Error::Dimension(format!(
                    "{} group variances for m = {m}",
                    nu.variances.len()
                ))),
                None => Err(Error::Domain("general multilevel needs ν".into())),
            },
        }
    }
}

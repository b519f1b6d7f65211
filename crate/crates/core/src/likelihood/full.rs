use nalgebra::DVector;

use super::{SufficientStats, ThetaPoint};
use crate::dist::LN_2PI;
use crate::error::{Error, Result};
use crate::model::Family;

/// Every parameter of the model: coefficients, group effects and variances.
#[derive(Debug, Clone, PartialEq)]
pub struct FullParams {
    pub beta: DVector<f64>,
    /// One vector per group (length 1 for the simple family); empty for
    /// linear models.
    pub eta: Vec<DVector<f64>>,
    pub theta: ThetaPoint,
}

/// `Σ (y - x'β - z'η_j)²` from the sufficient statistics. `eta` is the
/// group effects laid out group after group (`J` entries for the simple
/// family, `J·m` for the general one).
pub fn residual_sum_of_squares(s: &SufficientStats, family: Family, beta: &[f64], eta: &[f64]) -> f64 {
    let d = s.d;
    let b = nalgebra::DVectorView::from_slice(beta, d);
    let gb = &s.gram_xx * b;
    let mut rss = s.sum_yy - 2.0 * b.dot(&s.sum_xy) + b.dot(&gb);
    match family {
        Family::LinearModel | Family::LinearModelNig => {}
        Family::SimpleMultilevel => {
            for j in 0..s.n_groups {
                let e = eta[j];
                let r = s.group_sum_y[j] - s.group_sum_x[j].dot(&b);
                rss += -2.0 * e * r + s.n_per_group[j] as f64 * e * e;
            }
        }
        Family::GeneralMultilevel => {
            let m = s.m;
            for j in 0..s.n_groups {
                let e = nalgebra::DVectorView::from_slice(&eta[j * m..(j + 1) * m], m);
                let r = &s.group_sum_zy[j] - s.group_cross_xz[j].tr_mul(&b);
                rss += -2.0 * e.dot(&r) + e.dot(&(&s.group_gram_zz[j] * e));
            }
        }
    }
    rss
}

/// Gaussian log-density of `y` given every parameter (no prior terms).
pub fn log_full_likelihood(s: &SufficientStats, family: Family, p: &FullParams) -> Result<f64> {
    let m = match family {
        Family::LinearModel | Family::LinearModelNig => 0,
        Family::SimpleMultilevel => 1,
        Family::GeneralMultilevel => s.m,
    };
    p.theta.check(family, s.m)?;
    if p.beta.len() != s.d {
        return Err(Error::Dimension(format!("β has length {} but d = {}", p.beta.len(), s.d)));
    }
    let want_groups = if m == 0 { 0 } else { s.n_groups };
    if p.eta.len() != want_groups || p.eta.iter().any(|e| e.len() != m) {
        return Err(Error::Dimension(format!(
            "expected {want_groups} group effects of length {m}"
        )));
    }
    let flat: Vec<f64> = p.eta.iter().flat_map(|e| e.iter().copied()).collect();
    let rss = residual_sum_of_squares(s, family, p.beta.as_slice(), &flat);
    Ok(gaussian_log_density(s.n, rss, p.theta.sigma2_y))
}

pub(crate) fn gaussian_log_density(n: usize, rss: f64, s2: f64) -> f64 {
    -0.5 * (n as f64 * (LN_2PI + s2.ln()) + rss / s2)
}

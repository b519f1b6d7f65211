//! Maximum-likelihood AIC with group effects integrated out and `β`
//! profiled by generalized least squares.

use argmin::core::{CostFunction, Executor, State, TerminationReason};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{SufficientStats, ThetaPoint};
use crate::linalg;
use crate::model::{EtaCovStructure, Family, ModelSpec};

const STARTS: usize = 5;
const MAX_ITERS: u64 = 4000;
/// Search box for log-variances, relative to the log OLS residual variance.
const LOG_VAR_BOX: (f64, f64) = (-30.0, 10.0);
const ATANH_BOX: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AicResult {
    pub aic: f64,
    pub k: usize,
    pub rank: usize,
    pub max_log_lik: f64,
    pub maximizer: ThetaPoint,
    /// False when no start met the simplex tolerance within the budget; the
    /// values are then those of the best iterate.
    pub converged: bool,
    pub evaluations: u64,
}

struct GroupPart {
    gzz: DMatrix<f64>,
    /// `r x m`, in the reduced basis.
    cxz: DMatrix<f64>,
    szy: DVector<f64>,
}

/// `log p(y | β̂(θ), θ)` with `η` integrated, on the range of `X`.
pub struct ProfileLikelihood {
    family: Family,
    n: usize,
    yy: f64,
    lambda: DVector<f64>,
    xy: DVector<f64>,
    groups: Vec<GroupPart>,
    structure: EtaCovStructure,
    samples_corr: bool,
    fixed_rho: f64,
    ols_variance: f64,
}

impl ProfileLikelihood {
    pub fn new(stats: &SufficientStats, spec: &ModelSpec) -> Result<Self> {
        if spec.d() != stats.d {
            return Err(Error::Dimension(format!("spec has d = {} but the data {}", spec.d(), stats.d)));
        }
        let eig = stats.gram_xx.clone().symmetric_eigen();
        let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
        let keep: Vec<usize> = (0..stats.d).filter(|&i| eig.eigenvalues[i] > 1e-9 * top).collect();
        let u = eig.eigenvectors.select_columns(&keep);
        let lambda = DVector::from_iterator(keep.len(), keep.iter().map(|&i| eig.eigenvalues[i]));
        let xy = u.transpose() * &stats.sum_xy;
        let fitted: f64 = xy.iter().zip(lambda.iter()).map(|(a, l)| a * a / l).sum();
        let ols_variance = ((stats.sum_yy - fitted) / stats.n.max(1) as f64).max(1e-12 * stats.sum_yy.max(1e-300));
        let (groups, structure) = match spec.family {
            Family::LinearModel | Family::LinearModelNig => (Vec::new(), EtaCovStructure::diagonal(0)),
            Family::SimpleMultilevel => (
                (0..stats.n_groups)
                    .map(|j| GroupPart {
                        gzz: DMatrix::from_element(1, 1, stats.n_per_group[j] as f64),
                        cxz: u.transpose() * DMatrix::from_column_slice(stats.d, 1, stats.group_sum_x[j].as_slice()),
                        szy: DVector::from_element(1, stats.group_sum_y[j]),
                    })
                    .collect(),
                EtaCovStructure::diagonal(1),
            ),
            Family::GeneralMultilevel => (
                (0..stats.n_groups)
                    .map(|j| GroupPart {
                        gzz: stats.group_gram_zz[j].clone(),
                        cxz: u.transpose() * &stats.group_cross_xz[j],
                        szy: stats.group_sum_zy[j].clone(),
                    })
                    .collect(),
                spec.eta_structure.clone().unwrap_or_else(|| EtaCovStructure::diagonal(spec.m())),
            ),
        };
        Ok(ProfileLikelihood {
            family: spec.family,
            n: stats.n,
            yy: stats.sum_yy,
            lambda,
            xy,
            groups,
            structure,
            samples_corr: spec.samples_correlation(),
            fixed_rho: spec.fixed_rho(),
            ols_variance,
        })
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    /// Number of optimized coordinates.
    pub fn dim(&self) -> usize {
        match self.family {
            Family::LinearModel | Family::LinearModelNig => 1,
            Family::SimpleMultilevel => 2,
            Family::GeneralMultilevel => 1 + self.structure.m + usize::from(self.samples_corr),
        }
    }

    fn theta(&self, u: &[f64]) -> ThetaPoint {
        let s2 = u[0].exp();
        match self.family {
            Family::LinearModel | Family::LinearModelNig => ThetaPoint::lm(s2),
            Family::SimpleMultilevel => ThetaPoint::simple(s2, u[1].exp()),
            Family::GeneralMultilevel => {
                let m = self.structure.m;
                let rho = if self.samples_corr { u[m + 1].tanh() } else { self.fixed_rho };
                ThetaPoint::general(s2, u[1..=m].iter().map(|v| v.exp()).collect(), rho)
            }
        }
    }

    pub fn log_likelihood(&self, theta: &ThetaPoint) -> Result<f64> {
        if self.n == 0 {
            return Ok(0.0);
        }
        let s2 = theta.sigma2_y;
        if !(s2 > 0.0) || !s2.is_finite() {
            return Err(Error::Domain("σ²_y must be positive".into()));
        }
        let r = self.rank();
        let mut h_mat = DMatrix::from_diagonal(&(&self.lambda / s2));
        let mut h = &self.xy / s2;
        let mut c = self.yy / s2;
        let mut log_det = self.n as f64 * s2.ln();
        let sigma_eta = match (theta.sigma2_eta, &theta.nu) {
            (Some(v), _) if self.family == Family::SimpleMultilevel => Some(DMatrix::from_element(1, 1, v)),
            (_, Some(nu)) if self.family == Family::GeneralMultilevel => {
                Some(self.structure.assemble(&nu.variances, nu.rho)?)
            }
            _ if self.groups.is_empty() => None,
            _ => return Err(Error::Domain("variance point does not match the model family".into())),
        };
        if let Some(se) = sigma_eta {
            if se.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("non-finite group variance".into()));
            }
            let l = linalg::cholesky(se, "group covariance")?.l();
            let m = l.nrows();
            let mut rhs = DMatrix::zeros(m, r + 1);
            for g in &self.groups {
                let a = DMatrix::identity(m, m) + l.transpose() * &g.gzz * &l / s2;
                let ca = linalg::cholesky(a, "group precision")?;
                log_det += linalg::log_det(&ca);
                rhs.columns_mut(0, r).copy_from(&(l.transpose() * g.cxz.transpose()));
                rhs.column_mut(r).copy_from(&(l.transpose() * &g.szy));
                let w = linalg::whiten_mat(&ca, &rhs) / s2;
                let wx = w.columns(0, r);
                let wy = w.column(r);
                h_mat.gemm(-1.0, &wx.transpose(), &wx, 1.0);
                h.gemv(-1.0, &wx.transpose(), &wy, 1.0);
                c -= wy.norm_squared();
            }
        }
        linalg::symmetrize(&mut h_mat);
        let fit = if r == 0 { 0.0 } else { linalg::inv_quad(&linalg::cholesky(h_mat, "profiled information")?, &h) };
        Ok(-0.5 * (self.n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + c - fit))
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        let v0 = self.ols_variance.ln();
        let mut b = vec![(v0 + LOG_VAR_BOX.0, v0 + LOG_VAR_BOX.1); self.dim()];
        if self.samples_corr {
            *b.last_mut().unwrap() = (-ATANH_BOX, ATANH_BOX);
        }
        b
    }

    fn start(&self, s: usize) -> Vec<f64> {
        const Y: [f64; STARTS] = [0.0, -0.5, 0.5, -1.0, 1.0];
        const ETA: [f64; STARTS] = [-2.0, -4.0, 0.0, -6.0, 1.0];
        const RHO: [f64; STARTS] = [0.0, 0.3, -0.3, 0.6, -0.6];
        let v0 = self.ols_variance.ln();
        let mut u = vec![v0 + Y[s]];
        match self.family {
            Family::LinearModel | Family::LinearModelNig => {}
            Family::SimpleMultilevel => u.push(v0 + ETA[s]),
            Family::GeneralMultilevel => {
                u.extend(std::iter::repeat_n(v0 + ETA[s], self.structure.m));
                if self.samples_corr {
                    u.push(RHO[s]);
                }
            }
        }
        u
    }
}

struct Objective<'a> {
    pl: &'a ProfileLikelihood,
    bounds: Vec<(f64, f64)>,
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    /// Negative log-likelihood at the point clamped into the box, plus a
    /// quadratic penalty on the distance outside it.
    fn cost(&self, u: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let mut penalty = 0.0;
        let clamped: Vec<f64> = u
            .iter()
            .zip(&self.bounds)
            .map(|(&x, &(lo, hi))| {
                let c = x.clamp(lo, hi);
                penalty += (x - c).powi(2);
                c
            })
            .collect();
        let ll = self.pl.log_likelihood(&self.pl.theta(&clamped)).unwrap_or(f64::NEG_INFINITY);
        let ll = if ll.is_finite() { ll } else { -1e12 };
        Ok(-ll + 1e3 * penalty)
    }
}

struct Search {
    best: Vec<f64>,
    cost: f64,
    converged: bool,
    evaluations: u64,
}

fn simplex_search(obj: &Objective, x0: Vec<f64>) -> Result<Search> {
    let mut simplex = vec![x0.clone()];
    for i in 0..x0.len() {
        let mut v = x0.clone();
        v[i] += 1.0;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-11)
        .map_err(|e| Error::Config(e.to_string()))?;
    let res = Executor::new(Objective { pl: obj.pl, bounds: obj.bounds.clone() }, solver)
        .configure(|s| s.max_iters(MAX_ITERS))
        .run()
        .map_err(|e| Error::Config(format!("simplex search failed: {e}")))?;
    let state = res.state();
    Ok(Search {
        best: state.get_best_param().cloned().unwrap_or(x0),
        cost: state.get_best_cost(),
        converged: matches!(state.get_termination_reason(), Some(TerminationReason::SolverConverged)),
        evaluations: state.get_func_counts().get("cost_count").copied().unwrap_or(0),
    })
}

/// Maximize the profiled likelihood over variance parameters and return
/// `AIC = 2k - 2 max log L`. `k` counts the independent columns of `X`,
/// plus the variance parameters for multilevel families; the residual
/// variance of a plain linear model is not counted.
pub fn aic(stats: &SufficientStats, spec: &ModelSpec) -> Result<AicResult> {
    let pl = ProfileLikelihood::new(stats, spec)?;
    let obj = Objective { pl: &pl, bounds: pl.bounds() };
    let mut best: Option<Search> = None;
    let mut evaluations = 0;
    let mut any_converged = false;
    for s in 0..STARTS {
        let first = simplex_search(&obj, pl.start(s))?;
        // A fresh simplex around the end point guards against collapse.
        let second = simplex_search(&obj, first.best.clone())?;
        evaluations += first.evaluations + second.evaluations;
        any_converged |= second.converged;
        let run = if second.cost <= first.cost { second } else { first };
        if best.as_ref().is_none_or(|b| run.cost < b.cost) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one start");
    let clamped: Vec<f64> = best.best.iter().zip(&obj.bounds).map(|(x, &(lo, hi))| x.clamp(lo, hi)).collect();
    let maximizer = pl.theta(&clamped);
    let max_log_lik = pl.log_likelihood(&maximizer)?;
    let k = pl.rank() + if spec.family.is_multilevel() { spec.variance_dim() } else { 0 };
    Ok(AicResult {
        aic: 2.0 * k as f64 - 2.0 * max_log_lik,
        k,
        rank: pl.rank(),
        max_log_lik,
        maximizer,
        converged: any_converged,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::dist::{standard_normal, InvGamma};
    use rand::{Rng, SeedableRng};

    fn ols_max_log_lik(y: &DVector<f64>, x: &DMatrix<f64>) -> f64 {
        let b = (x.transpose() * x).cholesky().unwrap().solve(&(x.transpose() * y));
        let rss = (y - x * b).norm_squared();
        let n = y.len() as f64;
        -0.5 * n * ((2.0 * std::f64::consts::PI * rss / n).ln() + 1.0)
    }

    #[test]
    fn linear_model_matches_ols() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for n in [6, 12, 40] {
            let x = DMatrix::from_fn(n, 3, |_, k| if k == 0 { 1.0 } else { rng.random_range(-2.0..2.0) });
            let y = DVector::from_fn(n, |i, _| 1.0 - x[(i, 1)] + 0.5 * standard_normal(&mut rng));
            let data = Dataset::ungrouped(y.clone(), x.clone()).unwrap();
            let spec = ModelSpec::linear(DVector::zeros(3), DMatrix::identity(3, 3), InvGamma::new(2.0, 1.0));
            let r = aic(&SufficientStats::precompute(&data), &spec).unwrap();
            let want = ols_max_log_lik(&y, &x);
            assert!((r.max_log_lik - want).abs() < 1e-6, "{} vs {want}", r.max_log_lik);
            assert_eq!(r.k, 3);
            assert!((r.aic - (6.0 - 2.0 * want)).abs() < 2e-6);
            assert!(r.converged);
        }
    }

    #[test]
    fn rank_deficient_design_uses_the_column_space() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let n = 20;
        let a = DMatrix::from_fn(n, 2, |_, k| if k == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let mut x = DMatrix::zeros(n, 3);
        x.columns_mut(0, 2).copy_from(&a);
        x.column_mut(2).copy_from(&(a.column(0) * 2.0 - a.column(1)));
        let y = DVector::from_fn(n, |i, _| a[(i, 1)] + standard_normal(&mut rng));
        let data = Dataset::ungrouped(y.clone(), x).unwrap();
        let spec = ModelSpec::linear(DVector::zeros(3), DMatrix::identity(3, 3), InvGamma::new(2.0, 1.0));
        let r = aic(&SufficientStats::precompute(&data), &spec).unwrap();
        assert_eq!(r.rank, 2);
        assert!((r.max_log_lik - ols_max_log_lik(&y, &a)).abs() < 1e-6);
    }

    #[test]
    fn simple_profile_matches_dense_gls() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let n = 15;
        let labels: Vec<String> = (0..n).map(|i| format!("g{}", i % 4)).collect();
        let x = DMatrix::from_fn(n, 2, |_, k| if k == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let y = DVector::from_fn(n, |_, _| standard_normal(&mut rng));
        let data = Dataset::from_labels(y.clone(), x.clone(), DMatrix::zeros(n, 0), &labels).unwrap();
        let spec = ModelSpec::simple_multilevel(
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            InvGamma::new(2.0, 1.0),
            InvGamma::new(2.0, 1.0),
        );
        let pl = ProfileLikelihood::new(&SufficientStats::precompute(&data), &spec).unwrap();
        let (s2, s2e) = (0.7, 0.4);
        let v = DMatrix::from_fn(n, n, |i, j| {
            f64::from(u8::from(i == j)) * s2 + if labels[i] == labels[j] { s2e } else { 0.0 }
        });
        let vi = v.clone().try_inverse().unwrap();
        let b = (x.transpose() * &vi * &x).try_inverse().unwrap() * x.transpose() * &vi * &y;
        let r = &y - &x * b;
        let want = -0.5
            * (n as f64 * (2.0 * std::f64::consts::PI).ln() + v.determinant().ln() + (r.transpose() * &vi * &r)[(0, 0)]);
        let got = pl.log_likelihood(&ThetaPoint::simple(s2, s2e)).unwrap();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn general_profile_matches_dense_gls() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 14;
        let labels: Vec<String> = (0..n).map(|i| format!("g{}", i % 3)).collect();
        let x = DMatrix::from_fn(n, 2, |_, k| if k == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let z = DMatrix::from_fn(n, 2, |_, k| if k == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let y = DVector::from_fn(n, |_, _| standard_normal(&mut rng));
        let data = Dataset::from_labels(y.clone(), x.clone(), z.clone(), &labels).unwrap();
        let ig = InvGamma::new(2.0, 1.0);
        let spec = ModelSpec::general_multilevel(
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            ig,
            vec![ig, ig],
            vec![(0, 1)],
            Some(crate::model::CorrPrior::TruncatedNormal),
        );
        let pl = ProfileLikelihood::new(&SufficientStats::precompute(&data), &spec).unwrap();
        let (s2, vars, rho) = (0.6, vec![0.5, 0.3], -0.4);
        let se = spec.eta_structure.as_ref().unwrap().assemble(&vars, rho).unwrap();
        let v = DMatrix::from_fn(n, n, |i, j| {
            let zz = if labels[i] == labels[j] { (z.row(i) * &se * z.row(j).transpose())[(0, 0)] } else { 0.0 };
            f64::from(u8::from(i == j)) * s2 + zz
        });
        let vi = v.clone().try_inverse().unwrap();
        let b = (x.transpose() * &vi * &x).try_inverse().unwrap() * x.transpose() * &vi * &y;
        let r = &y - &x * b;
        let want = -0.5
            * (n as f64 * (2.0 * std::f64::consts::PI).ln() + v.determinant().ln() + (r.transpose() * &vi * &r)[(0, 0)]);
        let got = pl.log_likelihood(&ThetaPoint::general(s2, vars, rho)).unwrap();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

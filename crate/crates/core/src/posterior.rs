//! Posterior summaries of `β`, Mahalanobis distances, Bayes factors and
//! per-county fit tables.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{BetaConditional, IntegratedLikelihood, SufficientStats, ThetaPoint};
use crate::linalg;
use crate::model::ModelSpec;
use crate::radon::RadonDesign;
use crate::smc::{EvidenceEstimate, LikelihoodMode, ParticleCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorSource {
    /// Mixture of conditional Gaussians over a variance-space trace.
    MixtureOverTrace,
    /// Sample moments of `β` draws.
    EmpiricalFromDraws,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub source: PosteriorSource,
}

/// Weighted conditional posteriors of `β`, one per particle.
pub type ConditionalTrace = Vec<(f64, BetaConditional)>;

/// `N(μ̃(θ), Σ̃(θ))` at every particle of an integrated-mode cloud.
pub fn conditional_trace(cloud: &ParticleCloud, stats: &SufficientStats, spec: &ModelSpec) -> Result<ConditionalTrace> {
    let il = IntegratedLikelihood::new(stats, spec)?;
    let w = cloud.weights();
    cloud
        .particles
        .iter()
        .zip(w)
        .filter(|(_, w)| *w > 0.0)
        .map(|(p, w)| Ok((w, il.beta_conditional(&ThetaPoint::from_unconstrained(spec, p))?)))
        .collect()
}

/// Law of total covariance over a weighted trace.
pub fn mixture_moments(trace: &[(f64, BetaConditional)]) -> Result<PosteriorGaussian> {
    let first = trace
        .first()
        .ok_or_else(|| Error::SingularCovariance("empty trace".into()))?;
    let d = first.1.mean.len();
    let total: f64 = trace.iter().map(|t| t.0).sum();
    if trace.len() == 1 {
        return Ok(PosteriorGaussian {
            mean: first.1.mean.clone(),
            cov: first.1.cov.clone(),
            source: PosteriorSource::MixtureOverTrace,
        });
    }
    let mut mean = DVector::zeros(d);
    for (w, c) in trace {
        mean.axpy(w / total, &c.mean, 1.0);
    }
    let mut cov = DMatrix::zeros(d, d);
    for (w, c) in trace {
        let r = &c.mean - &mean;
        cov += &c.cov * (w / total);
        cov.ger(w / total, &r, &r, 1.0);
    }
    linalg::symmetrize(&mut cov);
    Ok(PosteriorGaussian {
        mean,
        cov,
        source: PosteriorSource::MixtureOverTrace,
    })
}

/// Weighted sample mean and unbiased covariance of draws; with equal weights
/// the covariance uses `N - 1`.
pub fn empirical_moments(draws: &[Vec<f64>], weights: &[f64]) -> Result<PosteriorGaussian> {
    let d = draws.first().map_or(0, Vec::len);
    let mut distinct: Vec<&Vec<f64>> = draws.iter().zip(weights).filter(|(_, w)| **w > 0.0).map(|(p, _)| p).collect();
    distinct.sort_by(|a, b| a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    distinct.dedup();
    if distinct.len() < d + 1 {
        return Err(Error::SingularCovariance(format!(
            "{} distinct draws cannot support a {d}-dimensional covariance",
            distinct.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    let mut mean = DVector::zeros(d);
    for (p, w) in draws.iter().zip(weights) {
        mean.axpy(w / total, &DVector::from_column_slice(p), 1.0);
    }
    let mut cov = DMatrix::zeros(d, d);
    let mut sum_w2 = 0.0;
    for (p, w) in draws.iter().zip(weights) {
        let wn = w / total;
        sum_w2 += wn * wn;
        let r = DVector::from_column_slice(p) - &mean;
        cov.ger(wn, &r, &r, 1.0);
    }
    cov /= 1.0 - sum_w2;
    linalg::symmetrize(&mut cov);
    Ok(PosteriorGaussian {
        mean,
        cov,
        source: PosteriorSource::EmpiricalFromDraws,
    })
}

/// Posterior of `β` from a cloud at exponent 1.
pub fn recover_beta_posterior(
    cloud: &ParticleCloud,
    stats: &SufficientStats,
    spec: &ModelSpec,
    mode: LikelihoodMode,
) -> Result<PosteriorGaussian> {
    match mode {
        LikelihoodMode::Integrated => mixture_moments(&conditional_trace(cloud, stats, spec)?),
        LikelihoodMode::Full => {
            let d = stats.d;
            let beta: Vec<Vec<f64>> = cloud.particles.iter().map(|p| p[..d].to_vec()).collect();
            empirical_moments(&beta, &cloud.weights())
        }
    }
}

/// `√((b - μ)' Σ^{-1} (b - μ))`.
pub fn mahalanobis(b: &DVector<f64>, post: &PosteriorGaussian) -> Result<f64> {
    if b.len() != post.mean.len() {
        return Err(Error::Dimension(format!("b has length {} but the posterior {}", b.len(), post.mean.len())));
    }
    let ch = linalg::cholesky(post.cov.clone(), "posterior covariance")
        .map_err(|_| Error::SingularCovariance("posterior covariance is not positive definite".into()))?;
    Ok(linalg::inv_quad(&ch, &(b - &post.mean)).sqrt())
}

/// Root of the trace-averaged quadratic form
/// `Σ w_n (b - μ̃_n)' Σ̃_n^{-1} (b - μ̃_n)`.
pub fn mahalanobis_trace(b: &DVector<f64>, trace: &[(f64, BetaConditional)]) -> Result<f64> {
    let total: f64 = trace.iter().map(|t| t.0).sum();
    let mut acc = 0.0;
    for (w, c) in trace {
        if b.len() != c.mean.len() {
            return Err(Error::Dimension(format!("b has length {} but the posterior {}", b.len(), c.mean.len())));
        }
        let ch = linalg::cholesky(c.cov.clone(), "conditional covariance")
            .map_err(|_| Error::SingularCovariance("conditional covariance is not positive definite".into()))?;
        acc += w / total * linalg::inv_quad(&ch, &(b - &c.mean));
    }
    Ok(acc.sqrt())
}

/// Distance from `b` to the posterior of `β` in the convention of each mode:
/// trace-averaged for integrated clouds, sample moments for full ones.
pub fn posterior_mahalanobis(
    b: &DVector<f64>,
    cloud: &ParticleCloud,
    stats: &SufficientStats,
    spec: &ModelSpec,
    mode: LikelihoodMode,
) -> Result<f64> {
    match mode {
        LikelihoodMode::Integrated => mahalanobis_trace(b, &conditional_trace(cloud, stats, spec)?),
        LikelihoodMode::Full => mahalanobis(b, &recover_beta_posterior(cloud, stats, spec, mode)?),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceBand {
    NoEvidence,
    Positive,
    Strong,
    VeryStrong,
}

impl fmt::Display for EvidenceBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvidenceBand::NoEvidence => "no evidence",
            EvidenceBand::Positive => "positive",
            EvidenceBand::Strong => "strong",
            EvidenceBand::VeryStrong => "very strong",
        })
    }
}

/// Band edges on `2 |log BF|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandTable {
    pub positive: f64,
    pub strong: f64,
    pub very_strong: f64,
}

impl Default for BandTable {
    fn default() -> Self {
        BandTable {
            positive: 2.0,
            strong: 6.0,
            very_strong: 10.0,
        }
    }
}

impl BandTable {
    pub fn classify(&self, log_bf: f64) -> EvidenceBand {
        let s = 2.0 * log_bf.abs();
        if s >= self.very_strong {
            EvidenceBand::VeryStrong
        } else if s >= self.strong {
            EvidenceBand::Strong
        } else if s >= self.positive {
            EvidenceBand::Positive
        } else {
            EvidenceBand::NoEvidence
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesFactor {
    /// `log p(D|m) - log p(D|n)`; positive favours `m`.
    pub log_bf: f64,
    pub std: f64,
    pub band: EvidenceBand,
}

pub fn bayes_factor(m: &EvidenceEstimate, n: &EvidenceEstimate) -> BayesFactor {
    bayes_factor_with(m, n, &BandTable::default())
}

pub fn bayes_factor_with(m: &EvidenceEstimate, n: &EvidenceEstimate, table: &BandTable) -> BayesFactor {
    let log_bf = m.mean - n.mean;
    BayesFactor {
        log_bf,
        std: m.std.hypot(n.std),
        band: table.classify(log_bf),
    }
}

/// One line of the per-county fit table, in log-radon units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub county: String,
    /// 0 = basement, 1 = first floor.
    pub t: u8,
    pub mean: f64,
    pub sd: f64,
    /// False where the model has no coefficient for this county and floor.
    pub present: bool,
}

/// Design row of county `c` on floor `t`, read off the column labels.
fn county_row(design: &RadonDesign, c: usize, t: f64, uranium: f64) -> DVector<f64> {
    let name = &design.data.group_names()[c];
    DVector::from_iterator(
        design.labels.len(),
        design.labels.iter().map(|l| match l.as_str() {
            "basement" => 1.0 - t,
            "first_floor" => t,
            "uranium" => uranium,
            other => {
                let (kind, county) = other
                    .strip_suffix(']')
                    .and_then(|s| s.split_once('['))
                    .unwrap_or((other, ""));
                if county != name {
                    0.0
                } else {
                    match kind {
                        "county" => 1.0,
                        "basement" => 1.0 - t,
                        "first_floor" => t,
                        _ => 0.0,
                    }
                }
            }
        }),
    )
}

/// Predicted log radon per county on both floors, averaging the
/// conditional predictive moments over an integrated-mode cloud.
pub fn export_fits(cloud: &ParticleCloud, spec: &ModelSpec, design: &RadonDesign) -> Result<Vec<FitRow>> {
    let data = &design.data;
    let stats = SufficientStats::precompute(data);
    let il = IntegratedLikelihood::new(&stats, spec)?;
    let weights = cloud.weights();
    let thetas = cloud
        .particles
        .iter()
        .zip(weights)
        .filter(|(_, w)| *w > 0.0)
        .map(|(p, w)| {
            let th = ThetaPoint::from_unconstrained(spec, p);
            let beta = il.beta_conditional(&th)?;
            Ok((w, th, beta))
        })
        .collect::<Result<Vec<_>>>()?;
    let u_col = design.labels.iter().position(|l| l == "uranium");
    let rows = data.rows_by_group();
    let (ys, ym) = (design.y_scaling.sd, design.y_scaling.mean);
    let mut out = Vec::with_capacity(2 * data.n_groups());
    for (c, name) in data.group_names().iter().enumerate() {
        let uranium = match (u_col, rows[c].first()) {
            (Some(k), Some(&i)) => data.x()[(i, k)],
            _ => 0.0,
        };
        for t in [0u8, 1] {
            let tf = f64::from(t);
            let present = !design.dropped.contains(&format!("first_floor[{name}]")) || t == 0;
            let x = county_row(design, c, tf, uranium);
            let z = DVector::from_vec(vec![1.0 - tf, tf]);
            let (mut m1, mut m2) = (0.0, 0.0);
            for (w, th, beta) in &thetas {
                let (m, v) = il.linear_predictor_moments_given(th, beta, &x, &z, c)?;
                m1 += w * m;
                m2 += w * (v + m * m);
            }
            let var = (m2 - m1 * m1).max(0.0);
            out.push(FitRow {
                county: name.clone(),
                t,
                mean: m1 * ys + ym,
                sd: var.sqrt() * ys,
                present,
            });
        }
    }
    Ok(out)
}

/// `county,t,mean,sd,present`; absent rows leave mean and sd empty.
pub fn write_fits_csv(rows: &[FitRow], path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::from("county,t,mean,sd,present\n");
    for r in rows {
        if r.present {
            s.push_str(&format!("{},{},{},{},true\n", r.county, r.t, r.mean, r.sd));
        } else {
            s.push_str(&format!("{},{},,,false\n", r.county, r.t));
        }
    }
    crate::io::write_atomic(path.as_ref(), s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::dist::InvGamma;
    use crate::radon::{build_radon_design_with, radon_spec, RadonModel, RadonOptions, RadonTable};
    use crate::smc::{run_smc, LikelihoodMode};
    use rand::{Rng, SeedableRng};

    fn cond(mean: f64, var: f64) -> BetaConditional {
        BetaConditional {
            mean: DVector::from_element(1, mean),
            cov: DMatrix::from_element(1, 1, var),
        }
    }

    #[test]
    fn two_point_trace_distance() {
        let trace = vec![(0.5, cond(0.0, 1.0)), (0.5, cond(0.0, 4.0))];
        let d = mahalanobis_trace(&DVector::from_element(1, 2.0), &trace).unwrap();
        assert!((d - 2.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_point_trace_is_the_conditional() {
        let c = BetaConditional {
            mean: DVector::from_vec(vec![0.3, -1.0]),
            cov: DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]),
        };
        let p = mixture_moments(&[(1.0, c.clone())]).unwrap();
        assert_eq!(p.mean, c.mean);
        assert_eq!(p.cov, c.cov);
    }

    #[test]
    fn total_covariance_adds_spread_of_means() {
        let trace = vec![(0.5, cond(-1.0, 1.0)), (0.5, cond(1.0, 1.0))];
        let p = mixture_moments(&trace).unwrap();
        assert!(p.mean[0].abs() < 1e-15);
        assert!((p.cov[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn centre_point_is_at_distance_zero() {
        let draws: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
        let p = empirical_moments(&draws, &[1.0; 10]).unwrap();
        assert_eq!(mahalanobis(&p.mean.clone(), &p).unwrap(), 0.0);
    }

    #[test]
    fn too_few_distinct_draws() {
        let draws = vec![vec![1.0, 2.0]; 50];
        assert!(matches!(empirical_moments(&draws, &[1.0; 50]), Err(Error::SingularCovariance(_))));
    }

    #[test]
    fn empirical_covariance_uses_n_minus_one() {
        let draws = vec![vec![0.0], vec![2.0]];
        let p = empirical_moments(&draws, &[1.0, 1.0]).unwrap();
        assert!((p.cov[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn distance_is_invariant_under_linear_maps() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0)) + DMatrix::identity(3, 3) * 2.0;
            let l = DMatrix::from_fn(3, 3, |r, c| if r >= c { rng.random_range(0.2..1.5) } else { 0.0 });
            let p = PosteriorGaussian {
                mean: DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)),
                cov: &l * l.transpose(),
                source: PosteriorSource::EmpiricalFromDraws,
            };
            let b = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let q = PosteriorGaussian {
                mean: &a * &p.mean,
                cov: &a * &p.cov * a.transpose(),
                source: p.source,
            };
            let d1 = mahalanobis(&b, &p).unwrap();
            let d2 = mahalanobis(&(&a * &b), &q).unwrap();
            assert!((d1 - d2).abs() < 1e-8 * (1.0 + d1), "{d1} vs {d2}");
        }
    }

    #[test]
    fn vague_prior_mean_approaches_least_squares() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 20;
        let x = DMatrix::from_fn(n, 2, |_, k| if k == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let y = DVector::from_fn(n, |i, _| 0.7 + 2.0 * x[(i, 1)] + 0.3 * crate::dist::standard_normal(&mut rng));
        let ols = (x.transpose() * &x).cholesky().unwrap().solve(&(x.transpose() * &y));
        let data = Dataset::ungrouped(y, x).unwrap();
        let stats = SufficientStats::precompute(&data);
        let spec = ModelSpec::linear(DVector::zeros(2), DMatrix::identity(2, 2) * 1e6, InvGamma::new(3.0, 1.0));
        let il = IntegratedLikelihood::new(&stats, &spec).unwrap();
        let c = il.beta_conditional(&ThetaPoint::lm(0.09)).unwrap();
        let p = mixture_moments(&[(1.0, c)]).unwrap();
        for k in 0..2 {
            assert!((p.mean[k] - ols[k]).abs() < 1e-3 * ols[k].abs());
        }
    }

    fn est(mean: f64, std: f64) -> EvidenceEstimate {
        EvidenceEstimate {
            runs: vec![mean],
            mean,
            std,
            draws_per_stage: 100,
            likelihood_mode: LikelihoodMode::Integrated,
            single_run: false,
            stages: vec![3],
            seeds: vec![0],
        }
    }

    #[test]
    fn bayes_factor_bands_and_antisymmetry() {
        let a = est(-1224.14, 0.05);
        let b = est(-1279.87, 0.04);
        let ab = bayes_factor(&a, &b);
        let ba = bayes_factor(&b, &a);
        assert_eq!(ab.log_bf, -ba.log_bf);
        assert!((ab.log_bf - 55.73).abs() < 1e-9);
        assert_eq!(ab.band, EvidenceBand::VeryStrong);
        assert!((ab.std - 0.05f64.hypot(0.04)).abs() < 1e-15);
        let same = bayes_factor(&a, &a);
        assert_eq!(same.log_bf, 0.0);
        assert_eq!(same.band, EvidenceBand::NoEvidence);
        let t = BandTable::default();
        assert_eq!(t.classify(1.5), EvidenceBand::Positive);
        assert_eq!(t.classify(-3.5), EvidenceBand::Strong);
    }

    fn radon_fits(model: RadonModel) -> Vec<FitRow> {
        let design = build_radon_design_with(&RadonTable::bundled(), model, &RadonOptions::default()).unwrap();
        let spec = radon_spec(model, design.data.d());
        let stats = SufficientStats::precompute(&design.data);
        let (_, cloud) = run_smc(&stats, &spec, LikelihoodMode::Integrated, 60, 1).unwrap();
        export_fits(&cloud, &spec, &design).unwrap()
    }

    #[test]
    fn complete_pooling_gives_one_fit_for_all_counties() {
        let rows = radon_fits(RadonModel::M0);
        assert_eq!(rows.len(), 170);
        for r in &rows {
            let same = &rows[usize::from(r.t)];
            assert_eq!((r.mean, r.sd), (same.mean, same.sd));
            assert!(r.sd >= 0.0 && r.present);
        }
    }

    #[test]
    fn missing_first_floor_is_absent() {
        let rows = radon_fits(RadonModel::M3);
        let absent: Vec<&FitRow> = rows.iter().filter(|r| !r.present).collect();
        assert_eq!(absent.len(), 25);
        assert!(absent.iter().all(|r| r.t == 1));
        assert!(rows.iter().all(|r| r.sd >= 0.0));
    }
}

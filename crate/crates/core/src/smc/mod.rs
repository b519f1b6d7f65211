//! Tempered sequential Monte Carlo for the log evidence.
//!
//! Particles start from the prior and are moved towards the posterior by
//! raising the likelihood to an exponent that climbs from 0 to 1. Each stage
//! picks the next exponent by bisection so the effective sample size stays
//! at a fixed fraction of the cloud, reweights, resamples systematically and
//! rejuvenates with random-walk Metropolis–Hastings. The log evidence is the
//! sum of the log weighted-mean incremental weights.
//!
//! In integrated mode the particles live in variance space only; in full mode
//! they carry `β`, every group effect and the variances.

mod cloud;
mod mh;
mod target;

pub use cloud::{ess, systematic_indices, ParticleCloud};
pub use mh::mh_rejuvenate;
pub use target::{FullTarget, IntegratedTarget, Target};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::SufficientStats;
use crate::linalg::log_sum_exp;
use crate::model::ModelSpec;

use cloud::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodMode {
    /// Sample variance parameters; `β` and `η` integrated analytically.
    Integrated,
    /// Sample every parameter against the full likelihood.
    Full,
}

impl LikelihoodMode {
    /// Default MH sweeps per stage.
    pub fn default_sweeps(self) -> usize {
        match self {
            LikelihoodMode::Integrated => 10,
            LikelihoodMode::Full => 25,
        }
    }
}

impl fmt::Display for LikelihoodMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LikelihoodMode::Integrated => "integrated",
            LikelihoodMode::Full => "full",
        })
    }
}

impl FromStr for LikelihoodMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "integrated" => Ok(LikelihoodMode::Integrated),
            "full" => Ok(LikelihoodMode::Full),
            _ => Err(Error::Config(format!("unknown likelihood mode `{s}` (integrated|full)"))),
        }
    }
}

/// Minimum cloud size accepted by [`run_smc`].
pub const MIN_PARTICLES: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct SmcConfig {
    pub n_particles: usize,
    /// Target ESS after reweighting, as a fraction of the cloud size.
    pub ess_fraction: f64,
    /// Resample when the ESS drops below this fraction of the cloud size.
    pub resample_fraction: f64,
    /// MH sweeps per stage; `None` uses the mode default.
    pub sweeps: Option<usize>,
    pub max_stages: usize,
    pub parallel: bool,
}

impl SmcConfig {
    pub fn new(n_particles: usize) -> Self {
        SmcConfig {
            n_particles,
            ess_fraction: 0.5,
            resample_fraction: 1.0,
            sweeps: None,
            max_stages: 5000,
            parallel: true,
        }
    }
}

/// Log evidence and final cloud for one run with default settings.
pub fn run_smc(
    stats: &SufficientStats,
    spec: &ModelSpec,
    mode: LikelihoodMode,
    n_particles: usize,
    seed: u64,
) -> Result<(f64, ParticleCloud)> {
    run_smc_with(stats, spec, mode, &SmcConfig::new(n_particles), seed)
}

pub fn run_smc_with(
    stats: &SufficientStats,
    spec: &ModelSpec,
    mode: LikelihoodMode,
    cfg: &SmcConfig,
    seed: u64,
) -> Result<(f64, ParticleCloud)> {
    let sweeps = cfg.sweeps.unwrap_or(mode.default_sweeps());
    match mode {
        LikelihoodMode::Integrated => run_target(&IntegratedTarget::new(stats, spec)?, cfg, sweeps, seed),
        LikelihoodMode::Full => run_target(&FullTarget::new(stats, spec)?, cfg, sweeps, seed),
    }
}

/// Weights after adding `δ·ℓ`; particles with `-inf` weight or likelihood
/// drop out once `δ > 0`.
fn reweighted(log_w: &[f64], log_lik: &[f64], delta: f64) -> Vec<f64> {
    log_w
        .iter()
        .zip(log_lik)
        .map(|(&w, &l)| {
            if delta == 0.0 {
                w
            } else if w == f64::NEG_INFINITY || l == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                w + delta * l
            }
        })
        .collect()
}

/// Largest step in `(0, remaining]` whose reweighted ESS stays at or above
/// `floor`. If even an infinitesimal step falls below the floor the smallest
/// bisection bracket is taken so tempering still advances.
fn next_increment(log_w: &[f64], log_lik: &[f64], remaining: f64, floor: f64) -> f64 {
    let ess_at = |d: f64| ess(&reweighted(log_w, log_lik, d));
    if ess_at(remaining) >= floor {
        return remaining;
    }
    let (mut lo, mut hi) = (0.0, remaining);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ess_at(mid) >= floor {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo > 0.0 {
        lo
    } else {
        hi
    }
}

fn map_particles<T: Send>(parallel: bool, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Tempered SMC on an arbitrary target.
pub fn run_target<T: Target + ?Sized>(target: &T, cfg: &SmcConfig, sweeps: usize, seed: u64) -> Result<(f64, ParticleCloud)> {
    let n = cfg.n_particles;
    if n < MIN_PARTICLES {
        return Err(Error::Config(format!("need at least {MIN_PARTICLES} particles, got {n}")));
    }
    if !(cfg.ess_fraction > 0.0 && cfg.ess_fraction < 1.0) {
        return Err(Error::Config(format!("ESS fraction {} outside (0, 1)", cfg.ess_fraction)));
    }
    let particles = map_particles(cfg.parallel, n, |i| target.sample_prior(&mut stream(seed, 0, i)));
    let mut cloud = ParticleCloud::from_particles(particles, seed);
    let evals = map_particles(cfg.parallel, n, |i| {
        let p = &cloud.particles[i];
        let lp = target.log_prior(p);
        (lp, if lp.is_finite() { target.log_likelihood(p) } else { f64::NEG_INFINITY })
    });
    cloud.log_prior = evals.iter().map(|e| e.0).collect();
    cloud.log_lik = evals.iter().map(|e| e.1).collect();
    cloud.log_weights = cloud
        .log_prior
        .iter()
        .map(|lp| if lp.is_finite() { 0.0 } else { f64::NEG_INFINITY })
        .collect();
    if cloud.log_weights.iter().all(|w| *w == f64::NEG_INFINITY) {
        return Err(Error::DegenerateCloud {
            stage: 0,
            reason: "no prior draw has finite density".into(),
        });
    }
    let floor = cfg.ess_fraction * n as f64;
    let eval = |x: &[f64]| {
        let lp = target.log_prior(x);
        if lp.is_finite() {
            (lp, target.log_likelihood(x))
        } else {
            (lp, f64::NEG_INFINITY)
        }
    };

    while cloud.beta_temper < 1.0 {
        cloud.stage += 1;
        let stage = cloud.stage;
        if stage > cfg.max_stages {
            return Err(Error::DegenerateCloud {
                stage,
                reason: format!("tempering stalled at exponent {} after {} stages", cloud.beta_temper, cfg.max_stages),
            });
        }
        let remaining = 1.0 - cloud.beta_temper;
        let delta = next_increment(&cloud.log_weights, &cloud.log_lik, remaining, floor);
        let new_w = reweighted(&cloud.log_weights, &cloud.log_lik, delta);
        let inc = log_sum_exp(new_w.iter().copied()) - log_sum_exp(cloud.log_weights.iter().copied());
        if !inc.is_finite() {
            return Err(Error::DegenerateCloud {
                stage,
                reason: "every particle has zero likelihood".into(),
            });
        }
        cloud.log_weights = new_w;
        cloud.beta_temper = if delta >= remaining { 1.0 } else { cloud.beta_temper + delta };
        cloud.log_z_increments.push(inc);
        cloud.betas.push(cloud.beta_temper);
        let e = cloud.ess();
        cloud.ess_history.push(e);
        if e < cfg.resample_fraction * n as f64 {
            cloud.resample(&mut stream(seed, stage, usize::MAX));
        }
        let beta = cloud.beta_temper;
        let moves = mh::move_particles(&mut cloud, &eval, beta, sweeps, cfg.parallel);
        mh::check_moves(stage, &moves)?;
        cloud.acceptance.push(moves.accepted as f64 / moves.proposals.max(1) as f64);
    }
    Ok((cloud.log_evidence(), cloud))
}

/// Mean and spread of the log evidence over independent runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEstimate {
    pub runs: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over runs; 0 for a single run.
    pub std: f64,
    pub draws_per_stage: usize,
    pub likelihood_mode: LikelihoodMode,
    pub single_run: bool,
    /// Number of tempering stages used by each run.
    pub stages: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl EvidenceEstimate {
    pub fn from_runs(runs: Vec<f64>, draws_per_stage: usize, likelihood_mode: LikelihoodMode, stages: Vec<usize>, seeds: Vec<u64>) -> Self {
        let (mean, std) = mean_std(&runs);
        EvidenceEstimate {
            single_run: runs.len() == 1,
            runs,
            mean,
            std,
            draws_per_stage,
            likelihood_mode,
            stages,
            seeds,
        }
    }
}

/// Mean and `n - 1` standard deviation; the spread of one value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Seed of run `k`: the master seed XOR `(k + 1)` times the 64-bit golden
/// ratio constant.
pub fn run_seed(master_seed: u64, k: usize) -> u64 {
    master_seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(k as u64 + 1)
}

pub fn estimate_evidence(
    stats: &SufficientStats,
    spec: &ModelSpec,
    mode: LikelihoodMode,
    n_runs: usize,
    n_particles: usize,
    master_seed: u64,
) -> Result<EvidenceEstimate> {
    estimate_evidence_with(stats, spec, mode, n_runs, &SmcConfig::new(n_particles), master_seed).map(|r| r.0)
}

/// Independent runs with seeds from [`run_seed`]; also returns each final cloud.
pub fn estimate_evidence_with(
    stats: &SufficientStats,
    spec: &ModelSpec,
    mode: LikelihoodMode,
    n_runs: usize,
    cfg: &SmcConfig,
    master_seed: u64,
) -> Result<(EvidenceEstimate, Vec<ParticleCloud>)> {
    if n_runs == 0 {
        return Err(Error::Config("need at least one run".into()));
    }
    let sweeps = cfg.sweeps.unwrap_or(mode.default_sweeps());
    let seeds: Vec<u64> = (0..n_runs).map(|k| run_seed(master_seed, k)).collect();
    let results: Vec<Result<(f64, ParticleCloud)>> = match mode {
        LikelihoodMode::Integrated => {
            let t = IntegratedTarget::new(stats, spec)?;
            run_many(&t, cfg, sweeps, &seeds)
        }
        LikelihoodMode::Full => {
            let t = FullTarget::new(stats, spec)?;
            run_many(&t, cfg, sweeps, &seeds)
        }
    };
    let mut runs = Vec::with_capacity(n_runs);
    let mut clouds = Vec::with_capacity(n_runs);
    for r in results {
        let (z, c) = r?;
        runs.push(z);
        clouds.push(c);
    }
    let stages = clouds.iter().map(|c| c.stage).collect();
    Ok((EvidenceEstimate::from_runs(runs, cfg.n_particles, mode, stages, seeds), clouds))
}

fn run_many<T: Target>(t: &T, cfg: &SmcConfig, sweeps: usize, seeds: &[u64]) -> Vec<Result<(f64, ParticleCloud)>> {
    if cfg.parallel {
        seeds.par_iter().map(|&s| run_target(t, cfg, sweeps, s)).collect()
    } else {
        seeds.iter().map(|&s| run_target(t, cfg, sweeps, s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::nig_log_evidence;
    use crate::data::Dataset;
    use crate::dist::InvGamma;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};

    fn nig_case(n: usize) -> (SufficientStats, ModelSpec) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let y = DVector::from_fn(n, |i, _| 0.5 - 1.2 * x[(i, 1)] + 0.4 * crate::dist::standard_normal(&mut rng));
        let d = Dataset::ungrouped(y, x).unwrap();
        let spec = ModelSpec::nig(DVector::zeros(2), DMatrix::identity(2, 2), InvGamma::new(3.0, 1.0), 5.0);
        (SufficientStats::precompute(&d), spec)
    }

    #[test]
    fn empty_data_gives_exact_zero() {
        let d = Dataset::new(DVector::zeros(0), DMatrix::zeros(0, 2), DMatrix::zeros(0, 0), vec![], vec![]).unwrap();
        let s = SufficientStats::precompute(&d);
        let spec = ModelSpec::linear(DVector::zeros(2), DMatrix::identity(2, 2), InvGamma::new(3.0, 1.0));
        for mode in [LikelihoodMode::Integrated, LikelihoodMode::Full] {
            for seed in [0, 17, u64::MAX] {
                for rf in [1.0, 0.0] {
                    let cfg = SmcConfig {
                        resample_fraction: rf,
                        ..SmcConfig::new(60)
                    };
                    let (z, c) = run_smc_with(&s, &spec, mode, &cfg, seed).unwrap();
                    assert_eq!(z, 0.0);
                    assert_eq!(c.beta_temper, 1.0);
                }
            }
        }
    }

    #[test]
    fn integrated_nig_matches_closed_form() {
        let (s, spec) = nig_case(40);
        let exact = nig_log_evidence(&s, &spec).unwrap();
        let est = estimate_evidence(&s, &spec, LikelihoodMode::Integrated, 4, 500, 1).unwrap();
        assert!((est.mean - exact).abs() < 0.2, "{} vs {exact}", est.mean);
    }

    #[test]
    fn tempering_ladder_is_monotone_and_keeps_ess_floor() {
        let (s, spec) = nig_case(60);
        let (_, c) = run_smc(&s, &spec, LikelihoodMode::Full, 200, 5).unwrap();
        assert!(c.betas.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*c.betas.last().unwrap(), 1.0);
        for e in &c.ess_history {
            assert!(*e >= 100.0 - 1e-9 && *e <= 200.0 + 1e-9, "ess {e}");
        }
        let sum: f64 = c.weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_estimate() {
        let (s, spec) = nig_case(20);
        let a = estimate_evidence(&s, &spec, LikelihoodMode::Integrated, 3, 100, 9).unwrap();
        let b = estimate_evidence(&s, &spec, LikelihoodMode::Integrated, 3, 100, 9).unwrap();
        assert_eq!(a, b);
        let cfg = SmcConfig {
            parallel: false,
            ..SmcConfig::new(100)
        };
        let (c, _) = estimate_evidence_with(&s, &spec, LikelihoodMode::Integrated, 3, &cfg, 9).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn single_run_is_flagged() {
        let (s, spec) = nig_case(10);
        let e = estimate_evidence(&s, &spec, LikelihoodMode::Integrated, 1, 60, 2).unwrap();
        assert!(e.single_run);
        assert_eq!(e.std, 0.0);
        assert_eq!(e.runs.len(), 1);
    }

    #[test]
    fn run_seeds_are_distinct() {
        let seeds: Vec<u64> = (0..8).map(|k| run_seed(123, k)).collect();
        for i in 0..8 {
            for j in 0..i {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
        assert_eq!(run_seed(0, 0), 0x9E37_79B9_7F4A_7C15);
    }

    #[test]
    fn too_few_particles() {
        let (s, spec) = nig_case(5);
        assert!(run_smc(&s, &spec, LikelihoodMode::Integrated, 10, 0).is_err());
    }

    #[test]
    fn mode_parses() {
        assert_eq!("Full".parse::<LikelihoodMode>().unwrap(), LikelihoodMode::Full);
        assert!("half".parse::<LikelihoodMode>().is_err());
    }
}

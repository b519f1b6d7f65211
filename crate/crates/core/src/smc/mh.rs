use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::cloud::{stream, ParticleCloud};
use crate::dist::standard_normal;
use crate::error::{Error, Result};

/// Lower factor of the random-walk proposal covariance: the weighted cloud
/// covariance times `2.38² / dim`, with a small ridge so collapsed clouds
/// still move.
pub(crate) fn proposal_factor(cloud: &ParticleCloud) -> DMatrix<f64> {
    let k = cloud.dim();
    let (_, mut cov) = cloud.weighted_moments();
    cov *= 2.38 * 2.38 / k as f64;
    let scale = cov.trace() / k as f64;
    let ridge = 1e-9 * scale.max(0.0) + 1e-12;
    for _ in 0..8 {
        let mut c = cov.clone();
        for i in 0..k {
            c[(i, i)] += ridge;
        }
        if let Some(ch) = nalgebra::Cholesky::new(c) {
            return ch.unpack();
        }
        cov = DMatrix::from_diagonal(&cov.diagonal().map(|v| v.max(ridge)));
    }
    DMatrix::identity(k, k) * ridge.sqrt()
}

/// Tempered density `lp + β·ll`; a zero exponent ignores the likelihood
/// entirely so `-inf · 0` never appears.
pub(crate) fn tempered(lp: f64, ll: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        lp
    } else {
        lp + beta * ll
    }
}

pub(crate) struct MoveSummary {
    pub accepted: usize,
    pub proposals: usize,
    pub finite: usize,
}

/// `sweeps` random-walk MH steps per particle targeting `lp + β·ll`, where
/// `eval` returns `(lp, ll)`. Particle `i` draws from its own stream, so the
/// result does not depend on scheduling.
pub(crate) fn move_particles<F>(
    cloud: &mut ParticleCloud,
    eval: &F,
    beta: f64,
    sweeps: usize,
    parallel: bool,
) -> MoveSummary
where
    F: Fn(&[f64]) -> (f64, f64) + Sync,
{
    if sweeps == 0 || cloud.is_empty() {
        return MoveSummary {
            accepted: 0,
            proposals: 0,
            finite: 0,
        };
    }
    let l = proposal_factor(cloud);
    let k = cloud.dim();
    let (seed, stage) = (cloud.rng_seed, cloud.stage);
    let step = |(i, ((x, lp), ll)): (usize, ((&mut Vec<f64>, &mut f64), &mut f64))| {
        let mut rng = stream(seed, stage, i);
        let mut cur = tempered(*lp, *ll, beta);
        let (mut acc, mut fin) = (0usize, 0usize);
        for _ in 0..sweeps {
            let e = DVector::from_fn(k, |_, _| standard_normal(&mut rng));
            let delta = &l * e;
            let prop: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            let (plp, pll) = eval(&prop);
            let new = tempered(plp, pll, beta);
            let u: f64 = rand::Rng::random(&mut rng);
            if new.is_finite() {
                fin += 1;
            }
            if new > f64::NEG_INFINITY && u.ln() < new - cur {
                *x = prop;
                *lp = plp;
                *ll = pll;
                cur = new;
                acc += 1;
            }
        }
        (acc, fin)
    };
    let items = cloud
        .particles
        .iter_mut()
        .zip(cloud.log_prior.iter_mut())
        .zip(cloud.log_lik.iter_mut())
        .enumerate();
    let counts: Vec<(usize, usize)> = if parallel {
        items.collect::<Vec<_>>().into_par_iter().map(step).collect()
    } else {
        items.map(step).collect()
    };
    let (accepted, finite) = counts.iter().fold((0, 0), |(a, f), (x, y)| (a + x, f + y));
    MoveSummary {
        accepted,
        proposals: sweeps * cloud.len(),
        finite,
    }
}

/// Evolve every particle by random-walk Metropolis–Hastings targeting
/// `target_logdensity`. The proposal covariance is the weighted cloud
/// covariance scaled by `2.38² / dim`. The stage acceptance rate is appended
/// to `cloud.acceptance`.
///
/// The cached per-particle prior slot holds the target density afterwards.
pub fn mh_rejuvenate<F>(mut cloud: ParticleCloud, target_logdensity: F, sweeps: usize) -> ParticleCloud
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if sweeps == 0 {
        return cloud;
    }
    let eval = |x: &[f64]| (target_logdensity(x), 0.0);
    cloud.log_prior = cloud.particles.iter().map(|p| target_logdensity(p)).collect();
    cloud.log_lik = vec![0.0; cloud.len()];
    let s = move_particles(&mut cloud, &eval, 0.0, sweeps, true);
    cloud.acceptance.push(s.accepted as f64 / s.proposals.max(1) as f64);
    cloud
}

pub(crate) fn check_moves(stage: usize, s: &MoveSummary) -> Result<()> {
    if s.proposals > 0 && s.finite == 0 {
        return Err(Error::DegenerateCloud {
            stage,
            reason: format!("all {} proposals had zero target density", s.proposals),
        });
    }
    Ok(())
}

//! How far the true coefficients sit from the recovered posterior of `β`,
//! for the model matching each simulated dataset, in both likelihood modes.
//!
//!     cargo run --release --example posterior_recovery -- [seed] [particles]

use mlevidence::likelihood::SufficientStats;
use mlevidence::posterior::{posterior_mahalanobis, recover_beta_posterior};
use mlevidence::simulation::{builtin_model_specs, generate_study, SimConfig};
use mlevidence::smc::{run_smc, LikelihoodMode};
use nalgebra::DVector;

fn main() -> mlevidence::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let seed = args.first().copied().unwrap_or(1);
    let particles = args.get(1).copied().unwrap_or(500) as usize;
    let cfg = SimConfig::with_seed(seed);
    let study = generate_study(&cfg)?;
    let specs = builtin_model_specs(&cfg);
    for ((data, truth), (model, spec)) in study.datasets.iter().zip(&specs) {
        let stats = SufficientStats::precompute(data);
        let b = DVector::from_column_slice(&truth.b);
        for mode in [LikelihoodMode::Integrated, LikelihoodMode::Full] {
            let (log_z, cloud) = run_smc(&stats, spec, mode, particles, seed)?;
            let post = recover_beta_posterior(&cloud, &stats, spec, mode)?;
            let dist = posterior_mahalanobis(&b, &cloud, &stats, spec, mode)?;
            let err = (&post.mean - &b).amax();
            println!("{} / {model} {:<10} log Z {log_z:>9.2}  distance {dist:>6.2}  max |mean - b| {err:.3}", truth.dataset, mode.to_string());
        }
    }
    Ok(())
}

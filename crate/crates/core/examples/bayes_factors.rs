//! Pairwise Bayes factors between the simulation models on one dataset.
//!
//!     cargo run --release --example bayes_factors -- [D0|D1|D2|D3] [seed]

use mlevidence::likelihood::SufficientStats;
use mlevidence::posterior::bayes_factor;
use mlevidence::simulation::{builtin_model_specs, generate_study, SimConfig, SimDataset};
use mlevidence::smc::{estimate_evidence, LikelihoodMode};

fn main() -> mlevidence::Result<()> {
    let mut args = std::env::args().skip(1);
    let which: SimDataset = args.next().unwrap_or_else(|| "D1".into()).parse()?;
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let cfg = SimConfig::with_seed(seed);
    let study = generate_study(&cfg)?;
    let stats = SufficientStats::precompute(&study.datasets[which.index()].0);
    let est = builtin_model_specs(&cfg)
        .into_iter()
        .map(|(m, spec)| Ok((m, estimate_evidence(&stats, &spec, LikelihoodMode::Integrated, 4, 500, seed)?)))
        .collect::<mlevidence::Result<Vec<_>>>()?;
    for (m, e) in &est {
        println!("{m}  log evidence {:.2} ({:.2})", e.mean, e.std);
    }
    for (i, (m, a)) in est.iter().enumerate() {
        for (n, b) in &est[i + 1..] {
            let bf = bayes_factor(a, b);
            println!("{m} vs {n}: 2 ln BF = {:>8.2} (std {:.2})  {}", 2.0 * bf.log_bf, 2.0 * bf.std, bf.band);
        }
    }
    Ok(())
}

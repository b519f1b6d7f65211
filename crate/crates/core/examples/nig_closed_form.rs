//! Closed-form NIG evidence next to its SMC estimate on each simulated dataset.
//!
//!     cargo run --release --example nig_closed_form -- [seed]

use mlevidence::analytic::{nig_log_evidence, nig_posterior};
use mlevidence::likelihood::SufficientStats;
use mlevidence::simulation::{builtin_model_spec, generate_study, SimConfig, SimModel};
use mlevidence::smc::{estimate_evidence, LikelihoodMode};

fn main() -> mlevidence::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2024);
    let cfg = SimConfig::with_seed(seed);
    let study = generate_study(&cfg)?;
    let spec = builtin_model_spec(SimModel::M3, &cfg);
    println!("data    exact      smc    (std)   posterior E[s2]");
    for (data, truth) in &study.datasets {
        let stats = SufficientStats::precompute(data);
        let exact = nig_log_evidence(&stats, &spec)?;
        let est = estimate_evidence(&stats, &spec, LikelihoodMode::Integrated, 8, 1000, seed)?;
        let post = nig_posterior(&stats, &spec)?;
        println!(
            "{:<4} {exact:>9.3} {:>9.3} ({:.3})   {:.4}",
            truth.dataset,
            est.mean,
            est.std,
            post.scale / (post.shape - 1.0)
        );
    }
    Ok(())
}

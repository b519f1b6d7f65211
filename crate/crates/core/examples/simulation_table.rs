//! Evidence of the four simulation models on the four simulated datasets,
//! in integrated and full mode, with the closed form for the NIG model.
//!
//!     cargo run --release --example simulation_table -- [seed] [particles] [runs]

use mlevidence::analytic::nig_log_evidence;
use mlevidence::likelihood::SufficientStats;
use mlevidence::simulation::{builtin_model_specs, generate_study, SimConfig, SimModel};
use mlevidence::smc::{estimate_evidence, LikelihoodMode};

fn main() -> mlevidence::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let seed = args.first().copied().unwrap_or(1);
    let particles = args.get(1).copied().unwrap_or(500) as usize;
    let runs = args.get(2).copied().unwrap_or(8) as usize;
    let cfg = SimConfig::with_seed(seed);
    let study = generate_study(&cfg)?;
    let specs = builtin_model_specs(&cfg);
    for mode in [LikelihoodMode::Integrated, LikelihoodMode::Full] {
        println!("{mode} likelihood, {runs} runs x {particles} particles");
        for (model, spec) in &specs {
            let mut line = format!("{model}");
            let t = std::time::Instant::now();
            for (data, _) in &study.datasets {
                let stats = SufficientStats::precompute(data);
                let e = estimate_evidence(&stats, spec, mode, runs, particles, seed)?;
                line += &format!("  {:>9.2} ({:.2})", e.mean, e.std);
            }
            println!("{line}  [{:.1?}]", t.elapsed());
        }
    }
    let m3 = &specs[SimModel::M3.index()].1;
    let mut line = "analytic M3".to_string();
    for (data, _) in &study.datasets {
        line += &format!("  {:>9.2}", nig_log_evidence(&SufficientStats::precompute(data), m3)?);
    }
    println!("{line}");
    Ok(())
}

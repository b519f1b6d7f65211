//! Log evidence of the radon models from integrated-likelihood SMC.
//!
//!     cargo run --release --example radon_evidence -- M0 M1 M4

use mlevidence::likelihood::SufficientStats;
use mlevidence::radon::{build_radon_design, radon_spec, RadonModel, RadonTable};
use mlevidence::smc::{estimate_evidence, LikelihoodMode};

fn main() -> mlevidence::Result<()> {
    let mut ids: Vec<String> = std::env::args().skip(1).collect();
    if ids.is_empty() {
        ids = vec!["M0".into(), "M1".into()];
    }
    let table = RadonTable::bundled();
    for id in ids {
        let model: RadonModel = id.parse()?;
        let (data, _) = build_radon_design(&table, model)?;
        let spec = radon_spec(model, data.d());
        let stats = SufficientStats::precompute(&data);
        let t = std::time::Instant::now();
        let est = estimate_evidence(&stats, &spec, LikelihoodMode::Integrated, 8, 2000, 2024)?;
        println!(
            "{model}: {:.3} ({:.3})  stages {:?}  [{:.1?}]",
            est.mean,
            est.std,
            est.stages,
            t.elapsed()
        );
    }
    Ok(())
}

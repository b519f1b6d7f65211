//! Maximum-likelihood AIC of the six radon models.
//!
//!     cargo run --release --example radon_aic

use mlevidence::aic::aic;
use mlevidence::likelihood::SufficientStats;
use mlevidence::radon::{build_radon_design, radon_spec, RadonModel, RadonTable};

fn main() -> mlevidence::Result<()> {
    let table = RadonTable::bundled();
    println!("model     k      AIC   max logL  converged  evals");
    for model in RadonModel::ALL {
        let (data, _) = build_radon_design(&table, model)?;
        let spec = radon_spec(model, data.d());
        let r = aic(&SufficientStats::precompute(&data), &spec)?;
        println!(
            "{model:<5} {:>5} {:>8.3} {:>10.3} {:>10} {:>6}",
            r.k, r.aic, r.max_log_lik, r.converged, r.evaluations
        );
        println!("      maximizer {:?}", r.maximizer);
    }
    Ok(())
}

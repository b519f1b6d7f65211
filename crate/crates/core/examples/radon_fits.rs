//! Fitted log radon per county on both floors, written as CSV.
//!
//!     cargo run --release --example radon_fits -- [M0..M5] [out.csv]

use mlevidence::likelihood::SufficientStats;
use mlevidence::posterior::{export_fits, write_fits_csv};
use mlevidence::radon::{build_radon_design_with, radon_spec, RadonModel, RadonOptions, RadonTable};
use mlevidence::smc::{run_smc, LikelihoodMode};

fn main() -> mlevidence::Result<()> {
    let mut args = std::env::args().skip(1);
    let model: RadonModel = args.next().unwrap_or_else(|| "M4".into()).parse()?;
    let out = args.next().unwrap_or_else(|| "radon_fits.csv".into());
    let design = build_radon_design_with(&RadonTable::bundled(), model, &RadonOptions::default())?;
    let spec = radon_spec(model, design.data.d());
    let stats = SufficientStats::precompute(&design.data);
    let (_, cloud) = run_smc(&stats, &spec, LikelihoodMode::Integrated, 500, 0)?;
    let rows = export_fits(&cloud, &spec, &design)?;
    for r in rows.iter().filter(|r| r.present).take(6) {
        println!("{:<14} t={} mean {:.3} sd {:.3}", r.county, r.t, r.mean, r.sd);
    }
    write_fits_csv(&rows, &out)?;
    println!("{} rows written to {out}", rows.len());
    Ok(())
}

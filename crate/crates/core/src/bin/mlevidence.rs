use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mlevidence::run::{
    cmd_compare, cmd_evidence, cmd_fit_export, cmd_simulate, CompareArgs, EvidenceArgs, FitExportArgs, ModelRef,
};
use mlevidence::smc::LikelihoodMode;

#[derive(Parser)]
#[command(name = "mlevidence", version, about = "Model evidence for linear and multilevel regression")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "MLEVIDENCE_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the four simulated datasets with their true parameters.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Estimate the log evidence of one model.
    Evidence {
        /// Dataset CSV; optional for radon models.
        #[arg(long)]
        data: Option<PathBuf>,
        /// sim:M0..sim:M3, radon:M0..radon:M5 or a TOML spec file.
        #[arg(long)]
        model: ModelRef,
        #[arg(long, default_value = "integrated")]
        mode: LikelihoodMode,
        #[arg(long, default_value_t = 2000)]
        particles: usize,
        #[arg(long, default_value_t = 8)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON result file; a manifest is written beside it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank several models by log evidence and AIC.
    Compare {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<ModelRef>,
        #[arg(long, default_value = "integrated")]
        mode: LikelihoodMode,
        #[arg(long, default_value_t = 2000)]
        particles: usize,
        #[arg(long, default_value_t = 8)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip the maximum-likelihood AIC column.
        #[arg(long)]
        no_aic: bool,
        /// `.csv` for tables, anything else for JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-county fitted log radon on both floors.
    FitExport {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: ModelRef,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        particles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> mlevidence::Result<bool> {
    let jobs = cli.jobs;
    match cli.cmd {
        Cmd::Simulate { out, seed } => {
            let s = cmd_simulate(&out, seed)?;
            for f in s.files {
                println!("{}", f.display());
            }
        }
        Cmd::Evidence { data, model, mode, particles, runs, seed, out } => {
            let o = cmd_evidence(&EvidenceArgs { data, model, mode, particles, runs, seed, out, jobs })?;
            println!("{} [{}] log evidence {:.3} (std {:.3}, {} runs)", o.model, o.mode, o.mean, o.std, o.runs.len());
            if let Some(a) = o.analytic {
                println!("{} analytic {a:.3}", o.model);
            }
            for d in &o.deviations {
                println!("note: {d}");
            }
        }
        Cmd::Compare { data, models, mode, particles, runs, seed, no_aic, out } => {
            let t = cmd_compare(&CompareArgs { data, models, mode, particles, runs, seed, with_aic: !no_aic, out, jobs })?;
            print!("{}", t.to_csv());
            if !t.bayes_factors.is_empty() {
                print!("{}", t.bayes_factors_csv());
            }
            return Ok(!t.has_errors());
        }
        Cmd::FitExport { data, model, out, particles, seed } => {
            let rows = cmd_fit_export(&FitExportArgs { data, model, particles, seed, out: out.clone(), jobs })?;
            println!("{} rows written to {}", rows.len(), out.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

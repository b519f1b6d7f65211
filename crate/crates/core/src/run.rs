//! Reproducible runs behind the command-line tool: simulate, evidence,
//! compare and fit-export. Every result file carries the digest of the
//! configuration that produced it; timings live only in the manifest.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aic::aic;
use crate::analytic::nig_log_evidence;
use crate::data::{load_csv, read_headers, write_csv, CsvSchema, Dataset};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::likelihood::SufficientStats;
use crate::model::{ensure_valid, Family, ModelSpec};
use crate::posterior::{bayes_factor, export_fits, write_fits_csv, EvidenceBand};
use crate::radon::{build_radon_design_with, radon_spec, RadonDesign, RadonModel, RadonOptions, RadonTable};
use crate::simulation::{builtin_model_spec, generate_study, SimConfig, SimDataset, SimModel, TrueParams};
use crate::smc::{estimate_evidence_with, LikelihoodMode, SmcConfig};

/// A model named on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelRef {
    Sim(SimModel),
    Radon(RadonModel),
    /// TOML model specification.
    File(PathBuf),
}

impl FromStr for ModelRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if let Some(rest) = t.strip_prefix("sim:") {
            return rest.parse().map(ModelRef::Sim);
        }
        if let Some(rest) = t.strip_prefix("radon:") {
            return rest.parse().map(ModelRef::Radon);
        }
        if t.ends_with(".toml") || Path::new(t).is_file() {
            return Ok(ModelRef::File(PathBuf::from(t)));
        }
        Err(Error::UnknownModel(format!(
            "{s}: expected sim:M0..sim:M3, radon:M0..radon:M5 or a .toml spec file"
        )))
    }
}

impl fmt::Display for ModelRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelRef::Sim(m) => write!(f, "sim:{m}"),
            ModelRef::Radon(m) => write!(f, "radon:{m}"),
            ModelRef::File(p) => write!(f, "{}", p.display()),
        }
    }
}

/// Data and prior ready for estimation.
pub struct Prepared {
    pub data: Dataset,
    pub spec: ModelSpec,
    pub deviations: Vec<String>,
    pub radon: Option<RadonDesign>,
}

fn load_generic(path: Option<&Path>) -> Result<Dataset> {
    let path = path.ok_or_else(|| Error::Config("--data is required for this model".into()))?;
    load_csv(path, &CsvSchema::detect_generic(&read_headers(path)?))
}

/// Load `data` for `model`. Radon models read a raw radon table (the bundled
/// one when `data` is absent); the others read the generic CSV layout.
pub fn prepare(model: &ModelRef, data: Option<&Path>) -> Result<Prepared> {
    let (data, spec, deviations, radon) = match model {
        ModelRef::Sim(m) => (load_generic(data)?, builtin_model_spec(*m, &SimConfig::default()), m.deviations(), None),
        ModelRef::Radon(m) => {
            let table = match data {
                Some(p) => RadonTable::from_csv(p)?,
                None => RadonTable::bundled(),
            };
            let design = build_radon_design_with(&table, *m, &RadonOptions::default())?;
            let spec = radon_spec(*m, design.data.d());
            (design.data.clone(), spec, design.notes(), Some(design))
        }
        ModelRef::File(p) => (load_generic(data)?, ModelSpec::from_toml_file(p)?, Vec::new(), None),
    };
    ensure_valid(&spec, &data)?;
    Ok(Prepared {
        data,
        spec,
        deviations,
        radon,
    })
}

/// Provenance record written next to every result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub config_digest: String,
    pub seed: u64,
    pub version: String,
    pub started_unix: u64,
    pub elapsed_secs: f64,
    pub deviations: Vec<String>,
    /// Per-run log evidence values, keyed by model.
    pub evidence_runs: Vec<(String, Vec<f64>)>,
    pub outputs: Vec<PathBuf>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: Option<&Path>) -> Result<Option<String>> {
    path.map(|p| std::fs::read(p).map(|b| sha256_hex(&b)).map_err(|e| Error::io(p, e)))
        .transpose()
}

struct Recorder {
    command: String,
    config: serde_json::Value,
    digest: String,
    seed: u64,
    started_unix: u64,
    clock: Instant,
}

impl Recorder {
    fn new(command: &str, config: serde_json::Value, seed: u64) -> Self {
        let digest = sha256_hex(config.to_string().as_bytes());
        Recorder {
            command: command.into(),
            config,
            digest,
            seed,
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            clock: Instant::now(),
        }
    }

    fn finish(
        self,
        path: &Path,
        deviations: Vec<String>,
        evidence_runs: Vec<(String, Vec<f64>)>,
        outputs: Vec<PathBuf>,
    ) -> Result<RunManifest> {
        let m = RunManifest {
            command: self.command,
            config: self.config,
            config_digest: self.digest,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").into(),
            started_unix: self.started_unix,
            elapsed_secs: self.clock.elapsed().as_secs_f64(),
            deviations,
            evidence_runs,
            outputs,
        };
        write_json(path, &m)?;
        Ok(m)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// `result.json` -> `result.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.manifest.json"))
}

/// Run `f` on a pool of `jobs` threads, or the global pool when `None`.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map(|p| p.install(f))
            .map_err(|e| Error::Config(e.to_string())),
        None => Ok(f()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateOutput {
    pub files: Vec<PathBuf>,
    pub manifest: RunManifest,
}

#[derive(Serialize)]
struct TruthSidecar<'a> {
    seed: u64,
    group_redraws: usize,
    manifest_digest: &'a str,
    datasets: Vec<&'a TrueParams>,
}

/// Write `D0.csv` .. `D3.csv` (with the time covariate as a trailing `t`
/// column), `true_params.json` and `manifest.json` into `out`.
pub fn cmd_simulate(out: &Path, seed: u64) -> Result<SimulateOutput> {
    let cfg = SimConfig::with_seed(seed);
    let rec = Recorder::new("simulate", serde_json::json!({"command": "simulate", "seed": seed}), seed);
    let study = generate_study(&cfg)?;
    let mut files = Vec::new();
    for (which, (data, _)) in SimDataset::ALL.iter().zip(&study.datasets) {
        let path = out.join(format!("{which}.csv"));
        write_csv(data, &path, &[("t", &study.covariates.t)])?;
        files.push(path);
    }
    let truth = out.join("true_params.json");
    write_json(
        &truth,
        &TruthSidecar {
            seed,
            group_redraws: study.covariates.group_redraws,
            manifest_digest: &rec.digest,
            datasets: study.datasets.iter().map(|(_, t)| t).collect(),
        },
    )?;
    files.push(truth);
    let deviations = SimModel::M2.deviations();
    let manifest = rec.finish(&out.join("manifest.json"), deviations, Vec::new(), files.clone())?;
    Ok(SimulateOutput { files, manifest })
}

#[derive(Debug, Clone)]
pub struct EvidenceArgs {
    pub data: Option<PathBuf>,
    pub model: ModelRef,
    pub mode: LikelihoodMode,
    pub particles: usize,
    pub runs: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

/// Result file of `evidence`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceOutput {
    pub model: String,
    pub mode: LikelihoodMode,
    pub runs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub particles: usize,
    pub stages: Vec<usize>,
    pub seed: u64,
    pub run_seeds: Vec<u64>,
    pub deviations: Vec<String>,
    /// Closed-form log evidence, for normal-inverse-gamma models.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub analytic: Option<f64>,
    pub manifest_digest: String,
}

fn evidence_config(cmd: &str, data: Option<&Path>, models: &[String], mode: LikelihoodMode, particles: usize, runs: usize, seed: u64) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "command": cmd,
        "data_sha256": file_digest(data)?,
        "models": models,
        "mode": mode,
        "particles": particles,
        "runs": runs,
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

pub fn cmd_evidence(args: &EvidenceArgs) -> Result<EvidenceOutput> {
    let config = evidence_config(
        "evidence",
        args.data.as_deref(),
        &[args.model.to_string()],
        args.mode,
        args.particles,
        args.runs,
        args.seed,
    )?;
    let rec = Recorder::new("evidence", config, args.seed);
    let p = prepare(&args.model, args.data.as_deref())?;
    let stats = SufficientStats::precompute(&p.data);
    let cfg = SmcConfig::new(args.particles);
    let (est, _) = with_jobs(args.jobs, || estimate_evidence_with(&stats, &p.spec, args.mode, args.runs, &cfg, args.seed))??;
    let analytic = match p.spec.family {
        Family::LinearModelNig => Some(nig_log_evidence(&stats, &p.spec)?),
        _ => None,
    };
    let out = EvidenceOutput {
        model: args.model.to_string(),
        mode: args.mode,
        runs: est.runs.clone(),
        mean: est.mean,
        std: est.std,
        particles: args.particles,
        stages: est.stages,
        seed: args.seed,
        run_seeds: est.seeds,
        deviations: p.deviations.clone(),
        analytic,
        manifest_digest: rec.digest.clone(),
    };
    if let Some(path) = &args.out {
        write_json(path, &out)?;
        rec.finish(&manifest_path(path), p.deviations, vec![(out.model.clone(), est.runs)], vec![path.clone()])?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompareRow {
    pub model: String,
    pub log_evidence: Option<f64>,
    pub std: Option<f64>,
    pub runs: Vec<f64>,
    pub aic: Option<f64>,
    pub aic_k: Option<usize>,
    pub aic_converged: Option<bool>,
    /// 1 = highest evidence.
    pub evidence_rank: Option<usize>,
    /// 1 = lowest AIC.
    pub aic_rank: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PairwiseBf {
    pub m: String,
    pub n: String,
    pub log_bf: f64,
    pub std: f64,
    pub band: EvidenceBand,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompareTable {
    pub mode: LikelihoodMode,
    pub particles: usize,
    pub runs: usize,
    pub seed: u64,
    pub rows: Vec<CompareRow>,
    pub bayes_factors: Vec<PairwiseBf>,
    pub deviations: Vec<String>,
    pub manifest_digest: String,
}

impl CompareTable {
    /// True when any model failed or its AIC search did not converge.
    pub fn has_errors(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some() || r.aic_converged == Some(false))
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
        let opt_u = |v: Option<usize>| v.map_or(String::new(), |v| v.to_string());
        let mut s = String::from("model,log_evidence,std,aic,aic_k,evidence_rank,aic_rank,error\n");
        for r in &self.rows {
            let err = r.error.as_deref().unwrap_or("").replace('"', "'");
            s.push_str(&format!(
                "{},{},{},{},{},{},{},\"{}\"\n",
                r.model,
                opt(r.log_evidence),
                opt(r.std),
                opt(r.aic),
                opt_u(r.aic_k),
                opt_u(r.evidence_rank),
                opt_u(r.aic_rank),
                err
            ));
        }
        s
    }

    pub fn bayes_factors_csv(&self) -> String {
        let mut s = String::from("m,n,log_bf,std,band\n");
        for b in &self.bayes_factors {
            s.push_str(&format!("{},{},{},{},{}\n", b.m, b.n, b.log_bf, b.std, b.band));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct CompareArgs {
    pub data: Option<PathBuf>,
    pub models: Vec<ModelRef>,
    pub mode: LikelihoodMode,
    pub particles: usize,
    pub runs: usize,
    pub seed: u64,
    pub with_aic: bool,
    /// `.csv` writes the ranking table plus a `*_bf.csv` sibling; anything
    /// else is JSON.
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

/// 1-based ranks of `values` (best first), ties broken by position.
fn ranks(values: &[Option<f64>], higher_is_better: bool) -> Vec<Option<usize>> {
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (values[a].unwrap(), values[b].unwrap());
        if higher_is_better { y.total_cmp(&x) } else { x.total_cmp(&y) }
    });
    let mut out = vec![None; values.len()];
    for (r, i) in idx.into_iter().enumerate() {
        out[i] = Some(r + 1);
    }
    out
}

pub fn cmd_compare(args: &CompareArgs) -> Result<CompareTable> {
    let names: Vec<String> = args.models.iter().map(ToString::to_string).collect();
    let mut config = evidence_config("compare", args.data.as_deref(), &names, args.mode, args.particles, args.runs, args.seed)?;
    config["aic"] = serde_json::json!(args.with_aic);
    let rec = Recorder::new("compare", config, args.seed);
    let cfg = SmcConfig::new(args.particles);
    let mut rows = Vec::new();
    let mut estimates = Vec::new();
    let mut deviations = Vec::new();
    for model in &args.models {
        let mut row = CompareRow {
            model: model.to_string(),
            log_evidence: None,
            std: None,
            runs: Vec::new(),
            aic: None,
            aic_k: None,
            aic_converged: None,
            evidence_rank: None,
            aic_rank: None,
            error: None,
        };
        let outcome = (|| -> Result<_> {
            let p = prepare(model, args.data.as_deref())?;
            let stats = SufficientStats::precompute(&p.data);
            let (est, _) = with_jobs(args.jobs, || estimate_evidence_with(&stats, &p.spec, args.mode, args.runs, &cfg, args.seed))??;
            let a = if args.with_aic { Some(aic(&stats, &p.spec)?) } else { None };
            Ok((p.deviations, est, a))
        })();
        match outcome {
            Ok((dev, est, a)) => {
                deviations.extend(dev.into_iter().map(|d| format!("{model}: {d}")));
                row.log_evidence = Some(est.mean);
                row.std = Some(est.std);
                row.runs = est.runs.clone();
                if let Some(a) = a {
                    row.aic = Some(a.aic);
                    row.aic_k = Some(a.k);
                    row.aic_converged = Some(a.converged);
                }
                estimates.push(Some(est));
            }
            Err(e) => {
                row.error = Some(e.to_string());
                estimates.push(None);
            }
        }
        rows.push(row);
    }
    let ev_rank = ranks(&rows.iter().map(|r| r.log_evidence).collect::<Vec<_>>(), true);
    let aic_rank = ranks(&rows.iter().map(|r| r.aic).collect::<Vec<_>>(), false);
    for (r, (e, a)) in rows.iter_mut().zip(ev_rank.into_iter().zip(aic_rank)) {
        r.evidence_rank = e;
        r.aic_rank = a;
    }
    let mut bayes_factors = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            if let (Some(a), Some(b)) = (&estimates[i], &estimates[j]) {
                let bf = bayes_factor(a, b);
                bayes_factors.push(PairwiseBf {
                    m: rows[i].model.clone(),
                    n: rows[j].model.clone(),
                    log_bf: bf.log_bf,
                    std: bf.std,
                    band: bf.band,
                });
            }
        }
    }
    let table = CompareTable {
        mode: args.mode,
        particles: args.particles,
        runs: args.runs,
        seed: args.seed,
        rows,
        bayes_factors,
        deviations: deviations.clone(),
        manifest_digest: rec.digest.clone(),
    };
    if let Some(path) = &args.out {
        let mut outputs = vec![path.clone()];
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            write_atomic(path, table.to_csv().as_bytes())?;
            let stem = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            let bf = path.with_file_name(format!("{stem}_bf.csv"));
            write_atomic(&bf, table.bayes_factors_csv().as_bytes())?;
            outputs.push(bf);
        } else {
            write_json(path, &table)?;
        }
        let runs = table.rows.iter().map(|r| (r.model.clone(), r.runs.clone())).collect();
        rec.finish(&manifest_path(path), deviations, runs, outputs)?;
    }
    Ok(table)
}

#[derive(Debug, Clone)]
pub struct FitExportArgs {
    pub data: Option<PathBuf>,
    pub model: ModelRef,
    pub particles: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: Option<usize>,
}

/// Per-county fitted log radon on both floors from one integrated-mode run.
pub fn cmd_fit_export(args: &FitExportArgs) -> Result<Vec<crate::posterior::FitRow>> {
    let ModelRef::Radon(which) = args.model else {
        return Err(Error::Config(format!("fit export needs a radon model, got {}", args.model)));
    };
    let mut config = evidence_config(
        "fit-export",
        args.data.as_deref(),
        &[args.model.to_string()],
        LikelihoodMode::Integrated,
        args.particles,
        1,
        args.seed,
    )?;
    config["model_id"] = serde_json::json!(which.to_string());
    let rec = Recorder::new("fit-export", config, args.seed);
    let p = prepare(&args.model, args.data.as_deref())?;
    let design = p.radon.as_ref().expect("radon model");
    let stats = SufficientStats::precompute(&p.data);
    let cfg = SmcConfig::new(args.particles);
    let (est, clouds) = with_jobs(args.jobs, || {
        estimate_evidence_with(&stats, &p.spec, LikelihoodMode::Integrated, 1, &cfg, args.seed)
    })??;
    let rows = export_fits(&clouds[0], &p.spec, design)?;
    write_fits_csv(&rows, &args.out)?;
    rec.finish(
        &manifest_path(&args.out),
        p.deviations,
        vec![(args.model.to_string(), est.runs)],
        vec![args.out.clone()],
    )?;
    Ok(rows)
}

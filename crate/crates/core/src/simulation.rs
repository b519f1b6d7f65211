//! Simulated time-series study: a piecewise-linear plus Fourier feature map,
//! Dirichlet-sized groups, four data generators `D0..D3` and the matching
//! candidate models `M0..M3`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dist::{standard_normal, InvGamma};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{CorrPrior, EtaCovStructure, ModelSpec};

/// Upper-left block of the coefficient covariance `S`.
pub const S1: [[f64; 6]; 6] = [
    [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 4.0, -3.0, -1.0, 0.0, 0.0],
    [0.0, -3.0, 5.0, -4.0, 2.0, 0.0],
    [0.0, -1.0, -4.0, 10.0, -4.0, 0.0],
    [0.0, 0.0, 2.0, -4.0, 5.0, 2.0],
    [0.0, 0.0, 0.0, 0.0, 2.0, 6.0],
];

/// Correlated pairs of the 4x4 group covariance (0-based).
pub const ETA_PATTERN: [(usize, usize); 2] = [(1, 2), (2, 3)];
pub const ETA_RHO: f64 = 0.2;
pub const NIG_GAMMA: f64 = 5.0;

/// Trend hinges at `changepoints` plus `fourier_order` cosine/sine pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProphetFeatureMap {
    pub changepoints: Vec<f64>,
    pub period: f64,
    pub fourier_order: usize,
}

impl ProphetFeatureMap {
    pub fn dim(&self) -> usize {
        1 + self.changepoints.len() + 2 * self.fourier_order
    }

    /// `(1, hinges, cos(2πkt/P) for k = 1..K, sin(2πkt/P) for k = 1..K)`.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let mut g = Vec::with_capacity(self.dim());
        g.push(1.0);
        g.extend(self.changepoints.iter().map(|&s| if t > s { t - s } else { 0.0 }));
        let w = 2.0 * std::f64::consts::PI * t / self.period;
        g.extend((1..=self.fourier_order).map(|k| (k as f64 * w).cos()));
        g.extend((1..=self.fourier_order).map(|k| (k as f64 * w).sin()));
        DVector::from_vec(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_groups: usize,
    pub n: usize,
    pub dirichlet_alpha: Vec<f64>,
    pub features: ProphetFeatureMap,
    /// Variance of the Fourier coefficients in `S`.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig::with_seed(0)
    }
}

impl SimConfig {
    pub fn with_seed(seed: u64) -> Self {
        let j = 15;
        SimConfig {
            n_groups: j,
            n: 1000,
            dirichlet_alpha: (2..=j + 1).map(|a| a as f64).collect(),
            features: ProphetFeatureMap {
                changepoints: vec![0.0, 0.2, 0.4, 0.6, 0.8],
                period: 1.0,
                fourier_order: 20,
            },
            lambda: 0.001,
            seed,
        }
    }

    pub fn d(&self) -> usize {
        self.features.dim()
    }

    /// `S = blockdiag(S1, λI)`.
    pub fn s_matrix(&self) -> DMatrix<f64> {
        let d = self.d();
        DMatrix::from_fn(d, d, |r, c| {
            if r < 6 && c < 6 {
                S1[r][c]
            } else if r == c {
                self.lambda
            } else {
                0.0
            }
        })
    }

    /// Prior covariance of the models: the diagonal of `S`.
    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.s_matrix().diagonal())
    }
}

/// `x_ij = g(t_ij)` under `cfg`.
pub fn feature_map(t: f64, cfg: &SimConfig) -> DVector<f64> {
    cfg.features.eval(t)
}

/// Centred group-varying covariates.
pub fn z_map(t: f64) -> DVector<f64> {
    let hinge = |s: f64| if t > s { t - s } else { 0.0 };
    DVector::from_vec(vec![1.0, t - 0.5, hinge(0.4) - 0.18, hinge(0.8) - 0.02])
}

/// Group labels: one Dirichlet draw of the proportions, then `n`
/// categorical draws. The whole allocation is redrawn until every group is
/// nonempty; the number of redraws is returned.
pub fn sample_groups(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, usize)> {
    let j = cfg.n_groups;
    if j == 0 || cfg.dirichlet_alpha.len() != j {
        return Err(Error::Config(format!(
            "{} Dirichlet parameters for {j} groups",
            cfg.dirichlet_alpha.len()
        )));
    }
    if cfg.n < j {
        return Err(Error::Config(format!("{} observations cannot fill {j} groups", cfg.n)));
    }
    if j == 1 {
        return Ok((vec![0; cfg.n], 0));
    }
    let gammas = cfg
        .dirichlet_alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).map_err(|e| Error::Config(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut redraws = 0;
    loop {
        let g: Vec<f64> = gammas.iter().map(|d| d.sample(rng)).collect();
        let total: f64 = g.iter().sum();
        let p: Vec<f64> = g.iter().map(|v| v / total).collect();
        let cat = WeightedIndex::new(&p).map_err(|e| Error::Config(e.to_string()))?;
        let labels: Vec<usize> = (0..cfg.n).map(|_| cat.sample(rng)).collect();
        let mut seen = vec![false; j];
        for &l in &labels {
            seen[l] = true;
        }
        if seen.iter().all(|s| *s) {
            return Ok((labels, redraws));
        }
        redraws += 1;
    }
}

/// Time points, groups and both design matrices, shared by all datasets.
#[derive(Debug, Clone)]
pub struct Covariates {
    pub t: Vec<f64>,
    pub group_of: Vec<usize>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub group_redraws: usize,
}

pub fn sample_covariates(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Covariates> {
    let (group_of, group_redraws) = sample_groups(cfg, rng)?;
    let t: Vec<f64> = (0..cfg.n).map(|_| rng.random::<f64>()).collect();
    let d = cfg.d();
    let mut x = DMatrix::zeros(cfg.n, d);
    let mut z = DMatrix::zeros(cfg.n, 4);
    for (i, &ti) in t.iter().enumerate() {
        x.set_row(i, &feature_map(ti, cfg).transpose());
        z.set_row(i, &z_map(ti).transpose());
    }
    Ok(Covariates {
        t,
        group_of,
        x,
        z,
        group_redraws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimDataset {
    D0,
    D1,
    D2,
    D3,
}

impl SimDataset {
    pub const ALL: [SimDataset; 4] = [SimDataset::D0, SimDataset::D1, SimDataset::D2, SimDataset::D3];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SimDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D{}", self.index())
    }
}

impl FromStr for SimDataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "D0" => Ok(SimDataset::D0),
            "D1" => Ok(SimDataset::D1),
            "D2" => Ok(SimDataset::D2),
            "D3" => Ok(SimDataset::D3),
            _ => Err(Error::UnknownModel(s.to_string())),
        }
    }
}

/// The coefficients and variances a dataset was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub dataset: SimDataset,
    pub b: Vec<f64>,
    /// `s²` or `s²_y`.
    pub s2_y: f64,
    /// `s²_h` for D1; the four diagonal variances for D2.
    pub s2_h: Vec<f64>,
    pub rho: Option<f64>,
    /// Group effects, one vector per group.
    pub h: Vec<Vec<f64>>,
    pub gamma: Option<f64>,
    /// Variance redraws forced by a non-positive-definite `S_h`.
    pub variance_redraws: usize,
}

fn mvn(l: &DMatrix<f64>, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let e = DVector::from_fn(l.nrows(), |_, _| standard_normal(rng));
    l * e * scale
}

const MAX_VARIANCE_REDRAWS: usize = 1000;

/// Draw true parameters and responses for one dataset on shared covariates.
pub fn generate_dataset(
    which: SimDataset,
    cov: &Covariates,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Dataset, TrueParams)> {
    let s_chol = linalg::cholesky(cfg.s_matrix(), "coefficient covariance S")?;
    let l = s_chol.l();
    let j = cfg.n_groups;
    let mut truth = TrueParams {
        dataset: which,
        b: Vec::new(),
        s2_y: 0.0,
        s2_h: Vec::new(),
        rho: None,
        h: Vec::new(),
        gamma: None,
        variance_redraws: 0,
    };
    let b = match which {
        SimDataset::D0 => {
            truth.s2_y = InvGamma::new(3.0, 0.4).sample(rng);
            mvn(&l, 1.0, rng)
        }
        SimDataset::D1 => {
            let b = mvn(&l, 1.0, rng);
            truth.s2_y = InvGamma::new(3.0, 0.3).sample(rng);
            let s2h = InvGamma::new(3.0, 0.1).sample(rng);
            truth.s2_h = vec![s2h];
            truth.h = (0..j).map(|_| vec![s2h.sqrt() * standard_normal(rng)]).collect();
            b
        }
        SimDataset::D2 => {
            let b = mvn(&l, 1.0, rng);
            truth.s2_y = InvGamma::new(3.0, 0.3).sample(rng);
            let structure = EtaCovStructure {
                m: 4,
                pattern: ETA_PATTERN.to_vec(),
            };
            let ig = InvGamma::new(3.0, 0.1);
            let lh = loop {
                let vars: Vec<f64> = (0..4).map(|_| ig.sample(rng)).collect();
                match structure.assemble(&vars, ETA_RHO) {
                    Ok(sh) => {
                        truth.s2_h = vars;
                        break linalg::cholesky(sh, "S_h")?.l();
                    }
                    Err(_) if truth.variance_redraws < MAX_VARIANCE_REDRAWS => truth.variance_redraws += 1,
                    Err(e) => return Err(e),
                }
            };
            truth.rho = Some(ETA_RHO);
            truth.h = (0..j).map(|_| mvn(&lh, 1.0, rng).iter().copied().collect()).collect();
            b
        }
        SimDataset::D3 => {
            truth.s2_y = InvGamma::new(3.0, 0.4).sample(rng);
            truth.gamma = Some(NIG_GAMMA);
            mvn(&l, (NIG_GAMMA * truth.s2_y).sqrt(), rng)
        }
    };
    let sd = truth.s2_y.sqrt();
    let y = DVector::from_fn(cfg.n, |i, _| {
        let mut v = cov.x.row(i).dot(&b.transpose());
        let g = cov.group_of[i];
        match which {
            SimDataset::D1 => v += truth.h[g][0],
            SimDataset::D2 => {
                v += (0..4).map(|k| cov.z[(i, k)] * truth.h[g][k]).sum::<f64>();
            }
            _ => {}
        }
        v + sd * standard_normal(rng)
    });
    truth.b = b.iter().copied().collect();
    let names = (1..=j).map(|k| k.to_string()).collect();
    let data = Dataset::new(y, cov.x.clone(), cov.z.clone(), cov.group_of.clone(), names)?;
    Ok((data, truth))
}

/// All four datasets from one seed. Covariates come from the seed's main
/// stream; dataset `Dk` draws from its own stream `k + 1`, so each dataset
/// is reproducible on its own.
#[derive(Debug, Clone)]
pub struct SimulatedStudy {
    pub covariates: Covariates,
    pub datasets: Vec<(Dataset, TrueParams)>,
}

pub fn generate_study(cfg: &SimConfig) -> Result<SimulatedStudy> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let covariates = sample_covariates(cfg, &mut rng)?;
    let datasets = SimDataset::ALL
        .iter()
        .map(|&w| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(w.index() as u64 + 1);
            generate_dataset(w, &covariates, cfg, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulatedStudy { covariates, datasets })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimModel {
    M0,
    M1,
    M2,
    M3,
}

impl SimModel {
    pub const ALL: [SimModel; 4] = [SimModel::M0, SimModel::M1, SimModel::M2, SimModel::M3];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Notes on where the model departs from a literal reading of its prior list.
    pub fn deviations(self) -> Vec<String> {
        match self {
            SimModel::M2 => vec!["four group variance priors IG(3, 0.1) to match the 4x4 group covariance".into()],
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for SimModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M{}", self.index())
    }
}

impl FromStr for SimModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let t = t.strip_prefix("sim:").unwrap_or(t);
        match t.to_ascii_uppercase().as_str() {
            "M0" => Ok(SimModel::M0),
            "M1" => Ok(SimModel::M1),
            "M2" => Ok(SimModel::M2),
            "M3" => Ok(SimModel::M3),
            _ => Err(Error::UnknownModel(s.to_string())),
        }
    }
}

/// Prior specification of a simulation-study model.
pub fn builtin_model_spec(which: SimModel, cfg: &SimConfig) -> ModelSpec {
    let d = cfg.d();
    let mu = DVector::zeros(d);
    let sigma = cfg.sigma_matrix();
    match which {
        SimModel::M0 => ModelSpec::linear(mu, sigma, InvGamma::new(3.0, 0.4)),
        SimModel::M1 => ModelSpec::simple_multilevel(mu, sigma, InvGamma::new(3.0, 0.4), InvGamma::new(3.0, 0.1)),
        SimModel::M2 => ModelSpec::general_multilevel(
            mu,
            sigma,
            InvGamma::new(3.0, 0.3),
            vec![InvGamma::new(3.0, 0.1); 4],
            ETA_PATTERN.to_vec(),
            Some(CorrPrior::Fixed(ETA_RHO)),
        ),
        SimModel::M3 => ModelSpec::nig(mu, sigma, InvGamma::new(3.0, 0.4), NIG_GAMMA),
    }
}

pub fn builtin_model_specs(cfg: &SimConfig) -> Vec<(SimModel, ModelSpec)> {
    SimModel::ALL.iter().map(|&m| (m, builtin_model_spec(m, cfg))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn features_at_zero() {
        let cfg = SimConfig::default();
        let g = feature_map(0.0, &cfg);
        assert_eq!(g.len(), 46);
        assert_eq!(g[0], 1.0);
        assert!(g.rows(1, 5).iter().all(|v| *v == 0.0));
        assert!(g.rows(6, 20).iter().all(|v| *v == 1.0));
        assert!(g.rows(26, 20).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn features_at_half() {
        let g = feature_map(0.5, &SimConfig::default());
        let hinge: Vec<f64> = g.rows(1, 5).iter().copied().collect();
        for (a, b) in hinge.iter().zip([0.5, 0.3, 0.1, 0.0, 0.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        for k in 1..=20 {
            let want = if k % 2 == 0 { 1.0 } else { -1.0 };
            assert_abs_diff_eq!(g[5 + k], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn hinges_are_continuous_and_bounded() {
        let cfg = SimConfig::default();
        for &s in &cfg.features.changepoints {
            let a = feature_map(s - 1e-9, &cfg);
            let b = feature_map(s + 1e-9, &cfg);
            assert!((a - b).rows(0, 6).amax() < 1e-8);
        }
        for k in 0..=200 {
            let g = feature_map(k as f64 / 200.0, &cfg);
            assert!(g.iter().all(|v| v.abs() <= 1.0 + 1e-15));
        }
    }

    #[test]
    fn z_endpoints() {
        let z0 = z_map(0.0);
        let z1 = z_map(1.0);
        for (a, b) in z0.iter().zip([1.0, -0.5, -0.18, -0.02]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        for (a, b) in z1.iter().zip([1.0, 0.5, 0.42, 0.18]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn z_has_centred_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 1_000_000;
        let mut sum = DVector::zeros(4);
        let mut sq = DVector::zeros(4);
        for _ in 0..n {
            let z = z_map(rng.random::<f64>());
            sq += z.component_mul(&z);
            sum += z;
        }
        let nf = n as f64;
        for k in 0..4 {
            let mean = sum[k] / nf;
            let se = ((sq[k] / nf - mean * mean) / nf).sqrt();
            let want = if k == 0 { 1.0 } else { 0.0 };
            assert!((mean - want).abs() <= 3.0 * se + 1e-15, "z{k}: {mean} ± {se}");
        }
    }

    #[test]
    fn dirichlet_means() {
        // E[p_j] = α_j / Σα = (j + 1) / 135 for j = 1..15.
        let cfg = SimConfig::default();
        let gammas: Vec<Gamma<f64>> = cfg.dirichlet_alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reps = 100_000;
        let mut sum = [0.0; 15];
        let mut sq = [0.0; 15];
        for _ in 0..reps {
            let g: Vec<f64> = gammas.iter().map(|d| d.sample(&mut rng)).collect();
            let t: f64 = g.iter().sum();
            for k in 0..15 {
                let p = g[k] / t;
                sum[k] += p;
                sq[k] += p * p;
            }
        }
        for k in 0..15 {
            let m = sum[k] / reps as f64;
            let se = ((sq[k] / reps as f64 - m * m) / reps as f64).sqrt();
            let want = (k + 2) as f64 / 135.0;
            assert!((m - want).abs() < 3.0 * se + 1e-12, "p{k}: {m} vs {want}");
        }
    }

    #[test]
    fn groups_nonempty_and_deterministic() {
        let cfg = SimConfig::default();
        let a = sample_groups(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_groups(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        for j in 0..15 {
            assert!(a.0.contains(&j));
        }
        let one = SimConfig {
            n_groups: 1,
            dirichlet_alpha: vec![2.0],
            ..SimConfig::default()
        };
        let (labels, _) = sample_groups(&one, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(labels.iter().all(|l| *l == 0));
    }

    #[test]
    fn s_matrix_blocks() {
        let cfg = SimConfig::default();
        let s = cfg.s_matrix();
        assert_eq!(s[(3, 3)], 10.0);
        assert_eq!(s[(2, 1)], -3.0);
        assert_eq!(s[(10, 10)], 0.001);
        assert_eq!(s[(10, 2)], 0.0);
        assert!(linalg::cholesky(s, "S").is_ok());
        let sigma = cfg.sigma_matrix();
        let head: Vec<f64> = sigma.diagonal().rows(0, 6).iter().copied().collect();
        assert_eq!(head, vec![1.0, 4.0, 5.0, 10.0, 5.0, 6.0]);
    }

    #[test]
    fn builtin_specs() {
        let cfg = SimConfig::default();
        let m0 = builtin_model_spec(SimModel::M0, &cfg);
        let head: Vec<f64> = m0.prior_cov.diagonal().rows(0, 6).iter().copied().collect();
        assert_eq!(head, vec![1.0, 4.0, 5.0, 10.0, 5.0, 6.0]);
        let m2 = builtin_model_spec(SimModel::M2, &cfg);
        assert_eq!(m2.fixed_rho(), 0.2);
        assert!(!m2.samples_correlation());
        assert_eq!(m2.ig_eta.as_ref().unwrap().len(), 4);
        assert_eq!(builtin_model_spec(SimModel::M3, &cfg).nig_scale, Some(5.0));
        assert_eq!("sim:m2".parse::<SimModel>().unwrap(), SimModel::M2);
    }

    #[test]
    fn study_is_reproducible() {
        let cfg = SimConfig {
            n: 200,
            ..SimConfig::with_seed(3)
        };
        let a = generate_study(&cfg).unwrap();
        let b = generate_study(&cfg).unwrap();
        for ((da, ta), (db, tb)) in a.datasets.iter().zip(&b.datasets) {
            assert_eq!(da.y(), db.y());
            assert_eq!(ta, tb);
        }
        assert_eq!(a.datasets[2].1.h.len(), 15);
        assert_eq!(a.datasets[2].1.h[0].len(), 4);
    }

    #[test]
    fn d0_residual_variance_matches_prior_mean() {
        // Average of s² over regenerations is E[IG(3, 0.4)] = 0.2.
        let cfg = SimConfig {
            n: 50,
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cov = sample_covariates(&cfg, &mut rng).unwrap();
        let reps = 4000;
        let mut total = 0.0;
        for _ in 0..reps {
            let (d, t) = generate_dataset(SimDataset::D0, &cov, &cfg, &mut rng).unwrap();
            let b = DVector::from_vec(t.b);
            let r = d.y() - d.x() * b;
            total += r.norm_squared() / (cfg.n as f64 - 1.0);
        }
        let avg = total / reps as f64;
        assert!((avg - 0.2).abs() < 0.02, "{avg}");
    }

    #[test]
    fn d3_coefficients_scale_with_noise() {
        // Under NIG(3, 0.4, 0, 5S), b_0 / s is N(0, 5) whatever s is.
        let cfg = SimConfig {
            n: 20,
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cov = sample_covariates(&cfg, &mut rng).unwrap();
        let reps = 4000;
        let v: f64 = (0..reps)
            .map(|_| {
                let (_, t) = generate_dataset(SimDataset::D3, &cov, &cfg, &mut rng).unwrap();
                t.b[0] * t.b[0] / t.s2_y
            })
            .sum::<f64>()
            / reps as f64;
        assert!((v - 5.0).abs() < 0.4, "{v}");
    }

    #[test]
    fn d1_with_zero_group_variance_reduces_to_d0() {
        // Same stream, zero group effects: residuals follow the D0 mechanism,
        // so their variance estimate agrees with s²_y.
        let cfg = SimConfig {
            n: 2000,
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cov = sample_covariates(&cfg, &mut rng).unwrap();
        let (d, mut t) = generate_dataset(SimDataset::D1, &cov, &cfg, &mut rng).unwrap();
        let b = DVector::from_vec(t.b.clone());
        let mut r = d.y() - d.x() * &b;
        for (i, &g) in cov.group_of.iter().enumerate() {
            r[i] -= t.h[g][0];
        }
        t.s2_h = vec![0.0];
        let var = r.norm_squared() / (cfg.n as f64 - 1.0);
        // Variance of a sample variance with 2000 draws: about s⁴ · 2 / n.
        assert!((var / t.s2_y - 1.0).abs() < 5.0 * (2.0 / cfg.n as f64).sqrt());
    }
}

//! Model families, prior hyperparameters and the group-level covariance
//! structure `Σ_η(ν)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dist::InvGamma;
use crate::error::{Error, Result};
use crate::linalg::{self, Chol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `β ~ N(μ, Σ)`, `σ² ~ IG(a, b)`.
    LinearModel,
    /// `β | σ² ~ N(μ, γσ²Σ)`, `σ² ~ IG(a, b)`.
    LinearModelNig,
    /// Group intercepts `η_j ~ N(0, σ²_η)`.
    SimpleMultilevel,
    /// Group coefficients `η_j ~ N(0, Σ_η(ν))` on rows `z`.
    GeneralMultilevel,
}

impl Family {
    pub fn is_multilevel(self) -> bool {
        matches!(self, Family::SimpleMultilevel | Family::GeneralMultilevel)
    }
}

/// Prior (or fixed value) for the correlation in `Σ_η`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorrPrior {
    Fixed(f64),
    /// N(0, 1) truncated to [-1, 1], normalized over that interval.
    TruncatedNormal,
}

/// Diagonal variances plus a list of off-diagonal positions that carry
/// `ρ σ_r σ_c`. Positions are 0-based `(row, col)`; the mirror entry is implied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EtaCovStructure {
    pub m: usize,
    pub pattern: Vec<(usize, usize)>,
}

impl EtaCovStructure {
    pub fn diagonal(m: usize) -> Self {
        EtaCovStructure {
            m,
            pattern: Vec::new(),
        }
    }

    /// Build `Σ_η` and check positive definiteness.
    pub fn assemble(&self, variances: &[f64], rho: f64) -> Result<DMatrix<f64>> {
        self.assemble_factored(variances, rho).map(|(m, _)| m)
    }

    pub(crate) fn assemble_factored(
        &self,
        variances: &[f64],
        rho: f64,
    ) -> Result<(DMatrix<f64>, Chol)> {
        if variances.len() != self.m {
            return Err(Error::Dimension(format!(
                "{} variances for a {}x{} group covariance",
                variances.len(),
                self.m,
                self.m
            )));
        }
        if variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain("group variances must be positive".into()));
        }
        if !(rho.abs() < 1.0) {
            return Err(Error::Domain(format!("correlation {rho} outside (-1, 1)")));
        }
        let mut s = DMatrix::from_diagonal(&DVector::from_column_slice(variances));
        for &(r, c) in &self.pattern {
            let v = rho * (variances[r] * variances[c]).sqrt();
            s[(r, c)] = v;
            s[(c, r)] = v;
        }
        let ch = linalg::cholesky(s.clone(), "group covariance Σ_η")?;
        Ok((s, ch))
    }
}

/// `Σ_η(ν)` from variances and `ρ`; see [`EtaCovStructure::assemble`].
pub fn assemble_sigma_eta(
    structure: &EtaCovStructure,
    variances: &[f64],
    rho: f64,
) -> Result<DMatrix<f64>> {
    structure.assemble(variances, rho)
}

/// Complete prior specification of one candidate model.
///
/// Fields are public so specs can be assembled freely; [`validate`] reports
/// every inconsistency at once.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
    /// Prior on `σ²` (or `σ²_y` for multilevel families).
    pub ig_y: InvGamma,
    /// One entry for the simple family, `m` entries for the general family.
    pub ig_eta: Option<Vec<InvGamma>>,
    /// Off-diagonal layout of `Σ_η`, general family only.
    pub eta_structure: Option<EtaCovStructure>,
    pub corr_prior: Option<CorrPrior>,
    /// `γ` in `β | σ² ~ N(μ, γσ²Σ)`.
    pub nig_scale: Option<f64>,
}

impl ModelSpec {
    pub fn linear(prior_mean: DVector<f64>, prior_cov: DMatrix<f64>, ig: InvGamma) -> Self {
        ModelSpec {
            family: Family::LinearModel,
            prior_mean,
            prior_cov,
            ig_y: ig,
            ig_eta: None,
            eta_structure: None,
            corr_prior: None,
            nig_scale: None,
        }
    }

    pub fn nig(
        prior_mean: DVector<f64>,
        prior_cov: DMatrix<f64>,
        ig: InvGamma,
        gamma: f64,
    ) -> Self {
        ModelSpec {
            family: Family::LinearModelNig,
            nig_scale: Some(gamma),
            ..ModelSpec::linear(prior_mean, prior_cov, ig)
        }
    }

    pub fn simple_multilevel(
        prior_mean: DVector<f64>,
        prior_cov: DMatrix<f64>,
        ig_y: InvGamma,
        ig_eta: InvGamma,
    ) -> Self {
        ModelSpec {
            family: Family::SimpleMultilevel,
            ig_eta: Some(vec![ig_eta]),
            ..ModelSpec::linear(prior_mean, prior_cov, ig_y)
        }
    }

    pub fn general_multilevel(
        prior_mean: DVector<f64>,
        prior_cov: DMatrix<f64>,
        ig_y: InvGamma,
        ig_eta: Vec<InvGamma>,
        pattern: Vec<(usize, usize)>,
        corr: Option<CorrPrior>,
    ) -> Self {
        let m = ig_eta.len();
        ModelSpec {
            family: Family::GeneralMultilevel,
            ig_eta: Some(ig_eta),
            eta_structure: Some(EtaCovStructure { m, pattern }),
            corr_prior: corr,
            ..ModelSpec::linear(prior_mean, prior_cov, ig_y)
        }
    }

    pub fn d(&self) -> usize {
        self.prior_mean.len()
    }

    /// Dimension of the group effect per group (0 for non-multilevel).
    pub fn m(&self) -> usize {
        match self.family {
            Family::SimpleMultilevel => 1,
            Family::GeneralMultilevel => self.eta_structure.as_ref().map_or(0, |s| s.m),
            _ => 0,
        }
    }

    /// Whether `ρ` is a sampled parameter.
    pub fn samples_correlation(&self) -> bool {
        matches!(self.corr_prior, Some(CorrPrior::TruncatedNormal))
    }

    /// Number of variance-space coordinates (log-variances plus atanh ρ).
    pub fn variance_dim(&self) -> usize {
        match self.family {
            Family::LinearModel | Family::LinearModelNig => 1,
            Family::SimpleMultilevel => 2,
            Family::GeneralMultilevel => 1 + self.m() + usize::from(self.samples_correlation()),
        }
    }

    /// The `ρ` used when it is not sampled.
    pub fn fixed_rho(&self) -> f64 {
        match self.corr_prior {
            Some(CorrPrior::Fixed(r)) => r,
            _ => 0.0,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&ModelConfig::from(self)).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.try_into()
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelSpec::from_toml(&text)
    }
}

/// Dimension and consistency checks against a dataset. An empty list means ok.
pub fn validate(spec: &ModelSpec, data: &Dataset) -> Vec<String> {
    let mut out = validate_spec(spec);
    let d = data.d();
    if spec.prior_mean.len() != d {
        out.push(format!(
            "prior mean length {} ≠ design width {d}",
            spec.prior_mean.len()
        ));
    }
    if spec.prior_cov.nrows() != d || spec.prior_cov.ncols() != d {
        out.push(format!(
            "prior covariance is {}x{} but design width is {d}",
            spec.prior_cov.nrows(),
            spec.prior_cov.ncols()
        ));
    }
    if spec.family == Family::GeneralMultilevel && spec.m() != data.m() {
        out.push(format!(
            "group covariance dimension {} ≠ group-varying width {}",
            spec.m(),
            data.m()
        ));
    }
    out
}

/// Checks that do not depend on data.
pub fn validate_spec(spec: &ModelSpec) -> Vec<String> {
    let mut out = Vec::new();
    let s = &spec.prior_cov;
    if s.nrows() != s.ncols() {
        out.push(format!("prior covariance is not square ({}x{})", s.nrows(), s.ncols()));
    } else if s.nrows() != spec.prior_mean.len() {
        out.push(format!(
            "prior covariance is {}x{} but prior mean has length {}",
            s.nrows(),
            s.ncols(),
            spec.prior_mean.len()
        ));
    } else if s.nrows() > 0 {
        if linalg::asymmetry(s) > 1e-12 {
            out.push("prior covariance is not symmetric".into());
        } else if linalg::cholesky(s.clone(), "prior covariance").is_err() {
            out.push("prior covariance is not positive definite".into());
        }
    }
    if spec.prior_mean.is_empty() {
        out.push("prior mean is empty".into());
    }
    if spec.prior_mean.iter().any(|v| !v.is_finite()) {
        out.push("prior mean has non-finite entries".into());
    }
    if !spec.ig_y.is_valid() {
        out.push(format!("invalid inverse-gamma prior {:?} for σ²", spec.ig_y));
    }

    let multilevel = spec.family.is_multilevel();
    match (&spec.ig_eta, multilevel) {
        (None, true) => out.push(format!("{:?} requires group variance priors (ig_eta)", spec.family)),
        (Some(_), false) => out.push(format!("{:?} must not carry group variance priors", spec.family)),
        (Some(v), true) => {
            if v.iter().any(|ig| !ig.is_valid()) {
                out.push("invalid inverse-gamma prior in ig_eta".into());
            }
            if spec.family == Family::SimpleMultilevel && v.len() != 1 {
                out.push(format!("simple multilevel needs exactly 1 group variance prior, got {}", v.len()));
            }
            if spec.family == Family::GeneralMultilevel && v.is_empty() {
                out.push("general multilevel needs at least one group variance prior".into());
            }
        }
        (None, false) => {}
    }

    if spec.family == Family::GeneralMultilevel {
        match &spec.eta_structure {
            None => out.push("general multilevel requires a group covariance structure".into()),
            Some(st) => {
                if let Some(v) = &spec.ig_eta {
                    if v.len() != st.m {
                        out.push(format!(
                            "{} group variance priors for a {}-dimensional group covariance",
                            v.len(),
                            st.m
                        ));
                    }
                }
                for (k, &(r, c)) in st.pattern.iter().enumerate() {
                    if r >= st.m || c >= st.m || r == c {
                        out.push(format!("correlation position ({r}, {c}) is invalid for m = {}", st.m));
                    }
                    if st.pattern[..k]
                        .iter()
                        .any(|&(a, b)| (a, b) == (r, c) || (a, b) == (c, r))
                    {
                        out.push(format!("correlation position ({r}, {c}) listed twice"));
                    }
                }
                if !st.pattern.is_empty() && spec.corr_prior.is_none() {
                    out.push("correlation positions given without a correlation prior".into());
                }
            }
        }
    } else {
        if spec.eta_structure.is_some() {
            out.push(format!("{:?} must not carry a group covariance structure", spec.family));
        }
        if spec.corr_prior.is_some() {
            out.push("correlation prior is only valid for general multilevel models".into());
        }
    }
    if let Some(CorrPrior::Fixed(r)) = spec.corr_prior {
        if !(r.abs() < 1.0) {
            out.push(format!("fixed correlation {r} outside (-1, 1)"));
        }
    }

    match (spec.family, spec.nig_scale) {
        (Family::LinearModelNig, None) => out.push("normal-inverse-gamma model requires gamma".into()),
        (Family::LinearModelNig, Some(g)) if !(g > 0.0) || !g.is_finite() => {
            out.push(format!("gamma must be positive, got {g}"))
        }
        (f, Some(_)) if f != Family::LinearModelNig => {
            out.push("gamma is only valid for the normal-inverse-gamma family".into())
        }
        _ => {}
    }
    out
}

/// Fail with all diagnostics if the spec does not match the data.
pub fn ensure_valid(spec: &ModelSpec, data: &Dataset) -> Result<()> {
    let v = validate(spec, data);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidSpec(v))
    }
}

// ----- config file representation -----

#[derive(Debug, Serialize, Deserialize)]
struct ModelConfig {
    family: Family,
    prior_mean: Vec<f64>,
    prior_cov: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    ig_y: InvGamma,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ig_eta: Option<Vec<InvGamma>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    corr: Option<CorrConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorrConfig {
    kind: CorrKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(default)]
    pattern: Vec<[usize; 2]>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum CorrKind {
    Fixed,
    TruncatedNormal,
    None,
}

impl From<&ModelSpec> for ModelConfig {
    fn from(s: &ModelSpec) -> Self {
        let corr = s.eta_structure.as_ref().map(|st| {
            let (kind, value) = match s.corr_prior {
                Some(CorrPrior::Fixed(v)) => (CorrKind::Fixed, Some(v)),
                Some(CorrPrior::TruncatedNormal) => (CorrKind::TruncatedNormal, None),
                None => (CorrKind::None, None),
            };
            CorrConfig {
                kind,
                value,
                pattern: st.pattern.iter().map(|&(r, c)| [r, c]).collect(),
            }
        });
        ModelConfig {
            family: s.family,
            prior_mean: s.prior_mean.iter().copied().collect(),
            prior_cov: s
                .prior_cov
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            gamma: s.nig_scale,
            ig_y: s.ig_y,
            ig_eta: s.ig_eta.clone(),
            corr,
        }
    }
}

impl TryFrom<ModelConfig> for ModelSpec {
    type Error = Error;

    fn try_from(c: ModelConfig) -> Result<Self> {
        let d = c.prior_cov.len();
        if c.prior_cov.iter().any(|r| r.len() != d) {
            return Err(Error::Config("prior_cov rows must all have the same length as the row count".into()));
        }
        let flat: Vec<f64> = c.prior_cov.iter().flatten().copied().collect();
        let prior_cov = DMatrix::from_row_slice(d, d, &flat);
        let (eta_structure, corr_prior) = match (c.family, &c.corr) {
            (Family::GeneralMultilevel, corr) => {
                let m = c.ig_eta.as_ref().map_or(0, Vec::len);
                let pattern = corr
                    .as_ref()
                    .map(|cc| cc.pattern.iter().map(|p| (p[0], p[1])).collect())
                    .unwrap_or_default();
                let prior = match corr {
                    None => None,
                    Some(cc) => match cc.kind {
                        CorrKind::None => None,
                        CorrKind::TruncatedNormal => Some(CorrPrior::TruncatedNormal),
                        CorrKind::Fixed => Some(CorrPrior::Fixed(cc.value.ok_or_else(|| {
                            Error::Config("corr.kind = \"fixed\" requires corr.value".into())
                        })?)),
                    },
                };
                (Some(EtaCovStructure { m, pattern }), prior)
            }
            (_, Some(_)) => {
                return Err(Error::Config("corr section is only valid for general_multilevel".into()))
            }
            (_, None) => (None, None),
        };
        let spec = ModelSpec {
            family: c.family,
            prior_mean: DVector::from_vec(c.prior_mean),
            prior_cov,
            ig_y: c.ig_y,
            ig_eta: c.ig_eta,
            eta_structure,
            corr_prior,
            nig_scale: c.gamma,
        };
        let problems = validate_spec(&spec);
        if problems.is_empty() {
            Ok(spec)
        } else {
            Err(Error::InvalidSpec(problems))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye(d: usize) -> DMatrix<f64> {
        DMatrix::identity(d, d)
    }

    #[test]
    fn uncorrelated_unit_variances_give_identity() {
        let st = EtaCovStructure {
            m: 2,
            pattern: vec![(0, 1)],
        };
        assert_eq!(st.assemble(&[1.0, 1.0], 0.0).unwrap(), eye(2));
    }

    #[test]
    fn correlated_entry_is_rho_sigma_sigma() {
        let st = EtaCovStructure {
            m: 2,
            pattern: vec![(0, 1)],
        };
        let s = st.assemble(&[4.0, 9.0], 0.5).unwrap();
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[4.0, 3.0, 3.0, 9.0]));
    }

    #[test]
    fn tridiagonal_four_by_four() {
        let st = EtaCovStructure {
            m: 4,
            pattern: vec![(1, 2), (2, 3)],
        };
        let s = st.assemble(&[1.0; 4], 0.2).unwrap();
        assert_eq!(s[(1, 2)], 0.2);
        assert_eq!(s[(3, 2)], 0.2);
        assert_eq!(s[(0, 1)], 0.0);
        // The lower-right 3x3 block is tridiagonal(0.2, 1, 0.2); its characteristic
        // polynomial has roots 1 and 1 ± 0.2·√2, all positive.
        let block_eigs = [1.0, 1.0 - 0.2 * 2f64.sqrt(), 1.0 + 0.2 * 2f64.sqrt()];
        for lam in block_eigs {
            let det = (1.0 - lam) * ((1.0 - lam).powi(2) - 0.04) - 0.2 * (0.2 * (1.0 - lam));
            assert!(det.abs() < 1e-12, "λ = {lam} is not a root");
            assert!(lam > 0.0);
        }
    }

    #[test]
    fn non_positive_definite_is_an_error() {
        // ρ = 0.9 on both positions of a 3x3 chain is indefinite (1 - 2·0.81 < 0).
        let st = EtaCovStructure {
            m: 3,
            pattern: vec![(0, 1), (1, 2), (0, 2)],
        };
        let err = st.assemble(&[1.0, 1.0, 1.0], -0.9).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite(_)));
    }

    #[test]
    fn zero_correlation_is_exactly_diagonal() {
        let st = EtaCovStructure {
            m: 3,
            pattern: vec![(0, 1), (1, 2)],
        };
        let v = [0.3, 2.0, 7.5];
        let s = st.assemble(&v, 0.0).unwrap();
        assert_eq!(s, DMatrix::from_diagonal(&DVector::from_column_slice(&v)));
    }

    fn data(d: usize, m: usize) -> Dataset {
        Dataset::new(
            DVector::from_vec(vec![0.0, 1.0]),
            DMatrix::from_element(2, d, 1.0),
            DMatrix::from_element(2, m, 1.0),
            vec![0, 1],
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    #[test]
    fn mean_length_mismatch_is_reported() {
        let spec = ModelSpec::linear(DVector::zeros(2), eye(2), InvGamma::new(3.0, 1.0));
        let v = validate(&spec, &data(3, 0));
        assert!(v.iter().any(|m| m == "prior mean length 2 ≠ design width 3"), "{v:?}");
    }

    #[test]
    fn simple_multilevel_without_group_prior_is_reported() {
        let mut spec = ModelSpec::simple_multilevel(
            DVector::zeros(1),
            eye(1),
            InvGamma::new(3.0, 1.0),
            InvGamma::new(3.0, 1.0),
        );
        spec.ig_eta = None;
        assert!(!validate(&spec, &data(1, 0)).is_empty());
    }

    #[test]
    fn radon_partial_pooling_spec_is_valid() {
        let spec = ModelSpec::simple_multilevel(
            DVector::zeros(3),
            eye(3),
            InvGamma::new(3.0, 1.0),
            InvGamma::new(3.0, 1.0),
        );
        assert!(validate(&spec, &data(3, 0)).is_empty());
    }

    #[test]
    fn asymmetric_prior_cov_is_reported() {
        let mut cov = eye(2);
        cov[(0, 1)] = 1e-9;
        let spec = ModelSpec::linear(DVector::zeros(2), cov, InvGamma::new(3.0, 1.0));
        assert!(validate_spec(&spec).iter().any(|m| m.contains("symmetric")));
    }

    #[test]
    fn toml_round_trip() {
        let spec = ModelSpec::general_multilevel(
            DVector::from_vec(vec![0.5, -1.0, 0.0]),
            DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.0, 0.0, 0.0, 3.0]),
            InvGamma::new(3.0, 0.3),
            vec![InvGamma::new(3.0, 1.0), InvGamma::new(2.5, 0.5)],
            vec![(0, 1)],
            Some(CorrPrior::TruncatedNormal),
        );
        let text = spec.to_toml().unwrap();
        assert_eq!(ModelSpec::from_toml(&text).unwrap(), spec);

        let nig = ModelSpec::nig(DVector::zeros(1), eye(1), InvGamma::new(3.0, 0.4), 5.0);
        assert_eq!(ModelSpec::from_toml(&nig.to_toml().unwrap()).unwrap(), nig);
    }

    #[test]
    fn config_with_fixed_correlation() {
        let text = r#"
family = "general_multilevel"
prior_mean = [0.0]
prior_cov = [[1.0]]
ig_y = { shape = 3.0, scale = 0.3 }
ig_eta = [{ shape = 3.0, scale = 0.1 }, { shape = 3.0, scale = 0.1 }]

[corr]
kind = "fixed"
value = 0.2
pattern = [[0, 1]]
"#;
        let spec = ModelSpec::from_toml(text).unwrap();
        assert_eq!(spec.corr_prior, Some(CorrPrior::Fixed(0.2)));
        assert_eq!(spec.m(), 2);
        assert_eq!(spec.variance_dim(), 3);
    }

    #[test]
    fn config_rejects_gamma_on_linear_model() {
        let text = r#"
family = "linear_model"
prior_mean = [0.0]
prior_cov = [[1.0]]
gamma = 2.0
ig_y = { shape = 3.0, scale = 0.3 }
"#;
        assert!(matches!(ModelSpec::from_toml(text), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn rho_perturbation_is_lipschitz() {
        let st = EtaCovStructure {
            m: 3,
            pattern: vec![(0, 1), (1, 2)],
        };
        let v = [0.5, 2.0, 1.5];
        let eps = 1e-6;
        let a = st.assemble(&v, 0.3).unwrap();
        let b = st.assemble(&v, 0.3 + eps).unwrap();
        let bound = eps * (2.0f64 * 1.5).sqrt().max((0.5f64 * 2.0).sqrt());
        assert!((a - b).amax() <= bound * (1.0 + 1e-9));
    }
}

//! O(d) evaluation of the linear-model integrated likelihood.
//!
//! With `Σ = LL'` and `L'GL = QΛQ'`, the posterior precision is
//! `P = L^{-T} Q (I + Λ/σ²) Q' L^{-1}`, so
//! `log|P| + log|Σ| = Σ log(1 + λ_i/σ²)` and
//! `h'P^{-1}h = Σ (a_i + c_i/σ²)² / (1 + λ_i/σ²)` with `a = Q'L^{-1}μ` and
//! `c = Q'L'Σxy`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::integrated::GaussianPrior;
use super::SufficientStats;
use crate::dist::LN_2PI;
use crate::error::Result;

#[derive(Debug, Clone)]
pub(crate) struct Spectral {
    lambda: DVector<f64>,
    a: DVector<f64>,
    c: DVector<f64>,
    groups: Option<GroupLowRank>,
}

impl Spectral {
    /// `with_groups` also prepares the scalar-intercept correction.
    pub fn new(s: &SufficientStats, prior: &GaussianPrior, with_groups: bool) -> Self {
        let l = prior.chol.l();
        let (q, lambda) = Spectral::basis(s, prior);
        let a = q.transpose() * crate::linalg::whiten(&prior.chol, &prior.mu);
        let c = q.transpose() * (l.transpose() * &s.sum_xy);
        let groups = with_groups.then(|| {
            let mut raw = DMatrix::zeros(s.d, s.n_groups);
            for (j, sx) in s.group_sum_x.iter().enumerate() {
                raw.set_column(j, sx);
            }
            GroupLowRank {
                u: q.transpose() * (l.transpose() * raw),
                n_j: s.n_per_group.iter().map(|&n| n as f64).collect(),
                sy: s.group_sum_y.clone(),
            }
        });
        Spectral { lambda, a, c, groups }
    }

    pub fn has_groups(&self) -> bool {
        self.groups.is_some()
    }

    pub fn log_integrated(&self, n: usize, yy: f64, mu_q: f64, s2: f64) -> f64 {
        let mut log_det = 0.0;
        let mut quad = 0.0;
        for i in 0..self.lambda.len() {
            let r = self.lambda[i] / s2;
            let u = self.a[i] + self.c[i] / s2;
            log_det += r.ln_1p();
            quad += u * u / (1.0 + r);
        }
        -0.5 * (log_det + n as f64 * (LN_2PI + s2.ln()) + mu_q + yy / s2 - quad)
    }
}

/// Scalar group intercepts on top of [`Spectral`]: in the basis `B = LQ`
/// the precision becomes `D - VV'` with `D = I + Λ/σ²` diagonal and
/// `V = Ũ diag(√(w_j/σ²))`, `Ũ = B'[Σx_1 … Σx_J]`, so determinant and
/// quadratic form only need a `J x J` factorization.
#[derive(Debug, Clone)]
pub(crate) struct GroupLowRank {
    u: DMatrix<f64>,
    n_j: Vec<f64>,
    sy: Vec<f64>,
}

impl Spectral {
    fn basis(s: &SufficientStats, prior: &GaussianPrior) -> (DMatrix<f64>, DVector<f64>) {
        let l = prior.chol.l();
        let mut k = l.transpose() * &s.gram_xx * &l;
        crate::linalg::symmetrize(&mut k);
        let eig = SymmetricEigen::new(k);
        (eig.eigenvectors, eig.eigenvalues.map(|v| v.max(0.0)))
    }

    /// Simple multilevel value; `s2e = 0` falls back to the linear model.
    pub fn log_integrated_groups(
        &self,
        n: usize,
        yy: f64,
        mu_q: f64,
        s2: f64,
        s2e: f64,
    ) -> Result<f64> {
        if s2e == 0.0 {
            return Ok(self.log_integrated(n, yy, mu_q, s2));
        }
        let g = self.groups.as_ref().expect("built with groups");
        let (d, j) = g.u.shape();
        let mut yy = yy;
        let mut extra = 0.0;
        let mut scale = Vec::with_capacity(j);
        let mut shift = DVector::zeros(d);
        for k in 0..j {
            let w = s2e / (s2 + g.n_j[k] * s2e);
            yy -= w * g.sy[k] * g.sy[k];
            extra += (g.n_j[k] * s2e / s2).ln_1p();
            scale.push((w / s2).sqrt());
            shift.axpy(w * g.sy[k] / s2, &g.u.column(k), 1.0);
        }
        let dinv = self.lambda.map(|l| 1.0 / (1.0 + l / s2));
        let h = DVector::from_fn(d, |i, _| self.a[i] + self.c[i] / s2 - shift[i]);
        let mut log_det: f64 = self.lambda.iter().map(|l| (l / s2).ln_1p()).sum();
        let mut quad: f64 = (0..d).map(|i| h[i] * h[i] * dinv[i]).sum();
        // V'D^{-1} with V = Ũ diag(scale)
        let vtd = DMatrix::from_fn(j, d, |k, i| g.u[(i, k)] * scale[k] * dinv[i]);
        let v = DMatrix::from_fn(d, j, |i, k| g.u[(i, k)] * scale[k]);
        let mut c = DMatrix::identity(j, j);
        c.gemm(-1.0, &vtd, &v, 1.0);
        crate::linalg::symmetrize(&mut c);
        let ch = crate::linalg::cholesky(c, "group correction I - V'D^{-1}V")?;
        log_det += crate::linalg::log_det(&ch);
        quad += crate::linalg::inv_quad(&ch, &(vtd * h));
        Ok(-0.5 * (log_det + n as f64 * (LN_2PI + s2.ln()) + extra + mu_q + yy / s2 - quad))
    }
}

//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Everything SPD goes through a Cholesky factor: log-determinants are
//! `2 * sum(log(diag(L)))` and quadratic forms `v' A^{-1} v` are `|L^{-1} v|^2`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type Chol = Cholesky<f64, Dyn>;

/// Cholesky factorization, failing with `NotPositiveDefinite` tagged by `what`.
pub fn cholesky(m: DMatrix<f64>, what: &'static str) -> Result<Chol> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what}: {}x{} is not square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(what));
    }
    Cholesky::new(m).ok_or(Error::NotPositiveDefinite(what))
}

pub fn log_det(ch: &Chol) -> f64 {
    let l = ch.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// `L^{-1} v` for the lower factor of `ch`.
pub fn whiten(ch: &Chol, v: &DVector<f64>) -> DVector<f64> {
    ch.l_dirty()
        .solve_lower_triangular(v)
        .expect("cholesky diagonal is nonzero")
}

/// `v' A^{-1} v` where `ch` factors `A`.
pub fn inv_quad(ch: &Chol, v: &DVector<f64>) -> f64 {
    whiten(ch, v).norm_squared()
}

/// `L^{-1} M` column by column.
pub fn whiten_mat(ch: &Chol, m: &DMatrix<f64>) -> DMatrix<f64> {
    ch.l_dirty()
        .solve_lower_triangular(m)
        .expect("cholesky diagonal is nonzero")
}

/// Largest absolute asymmetry `|a_ij - a_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Replace `m` by `(m + m') / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Numerically stable `log(sum(exp(xs)))`; `-inf` for empty or all `-inf` input.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_det_matches_product_of_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let ch = cholesky(m, "test").unwrap();
        assert!((log_det(&ch) - 11.0f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn inv_quad_matches_explicit_inverse() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let v = DVector::from_vec(vec![1.0, -2.0]);
        let explicit = (v.transpose() * m.clone().try_inverse().unwrap() * &v)[(0, 0)];
        let ch = cholesky(m, "test").unwrap();
        assert!((inv_quad(&ch, &v) - explicit).abs() < 1e-13);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky(m, "indef"),
            Err(Error::NotPositiveDefinite("indef"))
        ));
    }

    #[test]
    fn log_sum_exp_handles_infinities() {
        assert_eq!(log_sum_exp(vec![f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert!((log_sum_exp(vec![0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(vec![1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;

/// Data-only sums, computed once per dataset.
///
/// Pooled sums run over all rows in a canonical order of their values, and
/// per-group sums over each group in the same order. Any permutation of rows
/// gives bit-identical statistics, and relabeling groups leaves the pooled
/// sums bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub n: usize,
    pub n_groups: usize,
    pub d: usize,
    pub m: usize,
    pub sum_yy: f64,
    pub sum_xy: DVector<f64>,
    pub gram_xx: DMatrix<f64>,
    pub n_per_group: Vec<usize>,
    pub group_sum_y: Vec<f64>,
    pub group_sum_x: Vec<DVector<f64>>,
    /// `m x m` per group; empty matrices when `m = 0`.
    pub group_gram_zz: Vec<DMatrix<f64>>,
    pub group_sum_zy: Vec<DVector<f64>>,
    /// `d x m` per group.
    pub group_cross_xz: Vec<DMatrix<f64>>,
}

fn row_key(data: &Dataset, a: usize, b: usize) -> Ordering {
    let (y, x, z) = (data.y(), data.x(), data.z());
    y[a].total_cmp(&y[b])
        .then_with(|| {
            (0..x.ncols())
                .map(|k| x[(a, k)].total_cmp(&x[(b, k)]))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| {
            (0..z.ncols())
                .map(|k| z[(a, k)].total_cmp(&z[(b, k)]))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

impl SufficientStats {
    pub fn precompute(data: &Dataset) -> Self {
        let (n, d, m, j) = (data.n(), data.d(), data.m(), data.n_groups());
        let (y, x, z) = (data.y(), data.x(), data.z());

        let mut sum_yy = 0.0;
        let mut sum_xy = DVector::zeros(d);
        let mut gram_xx = DMatrix::zeros(d, d);
        let mut group_sum_y = Vec::with_capacity(j);
        let mut group_sum_x = Vec::with_capacity(j);
        let mut group_gram_zz = Vec::with_capacity(j);
        let mut group_sum_zy = Vec::with_capacity(j);
        let mut group_cross_xz = Vec::with_capacity(j);

        let mut xi = DVector::zeros(d);
        let mut zi = DVector::zeros(m);
        let mut all: Vec<usize> = (0..n).collect();
        all.sort_by(|&a, &b| row_key(data, a, b));
        for i in all {
            xi.copy_from(&x.row(i).transpose());
            sum_yy += y[i] * y[i];
            sum_xy.axpy(y[i], &xi, 1.0);
            gram_xx.ger(1.0, &xi, &xi, 1.0);
        }
        for mut rows in data.rows_by_group() {
            rows.sort_by(|&a, &b| row_key(data, a, b));
            let mut sy = 0.0;
            let mut sx = DVector::zeros(d);
            let mut gzz = DMatrix::zeros(m, m);
            let mut szy = DVector::zeros(m);
            let mut cxz = DMatrix::zeros(d, m);
            for i in rows {
                let yi = y[i];
                xi.copy_from(&x.row(i).transpose());
                zi.copy_from(&z.row(i).transpose());
                sy += yi;
                sx += &xi;
                if m > 0 {
                    gzz.ger(1.0, &zi, &zi, 1.0);
                    szy.axpy(yi, &zi, 1.0);
                    cxz.ger(1.0, &xi, &zi, 1.0);
                }
            }
            group_sum_y.push(sy);
            group_sum_x.push(sx);
            group_gram_zz.push(gzz);
            group_sum_zy.push(szy);
            group_cross_xz.push(cxz);
        }
        SufficientStats {
            n,
            n_groups: j,
            d,
            m,
            sum_yy,
            sum_xy,
            gram_xx,
            n_per_group: data.n_per_group().to_vec(),
            group_sum_y,
            group_sum_x,
            group_gram_zz,
            group_sum_zy,
            group_cross_xz,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_rows() -> Dataset {
        Dataset::ungrouped(
            DVector::from_vec(vec![2.0, 3.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn hand_sums() {
        let s = SufficientStats::precompute(&two_rows());
        assert_eq!(s.sum_yy, 13.0);
        assert_eq!(s.sum_xy, DVector::from_vec(vec![5.0, 3.0]));
        assert_eq!(s.gram_xx, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]));
        assert_eq!(s.group_sum_y, vec![5.0]);
    }

    #[test]
    fn permuted_rows_give_identical_stats() {
        let y = DVector::from_vec(vec![0.1, -0.7, 0.33, 1.9, -2.2, 0.05]);
        let x = DMatrix::from_fn(6, 2, |i, k| ((i * 7 + k * 3) % 5) as f64 * 0.37 - 0.4);
        let z = DMatrix::from_fn(6, 2, |i, k| ((i + 2 * k) % 3) as f64 * 0.9);
        let g = ["a", "b", "a", "b", "a", "b"];
        let d = Dataset::from_labels(y.clone(), x.clone(), z.clone(), &g).unwrap();
        let perm = [2, 1, 4, 3, 0, 5];
        let yp = DVector::from_iterator(6, perm.iter().map(|&i| y[i]));
        let xp = DMatrix::from_fn(6, 2, |i, k| x[(perm[i], k)]);
        let zp = DMatrix::from_fn(6, 2, |i, k| z[(perm[i], k)]);
        let gp: Vec<&str> = perm.iter().map(|&i| g[i]).collect();
        let dp = Dataset::from_labels(yp, xp, zp, &gp).unwrap();
        assert_eq!(SufficientStats::precompute(&d), SufficientStats::precompute(&dp));
    }

    #[test]
    fn group_sums_add_up() {
        let y = DVector::from_fn(9, |i, _| (i as f64 * 1.3).sin());
        let x = DMatrix::from_fn(9, 3, |i, k| (i as f64 + k as f64).cos());
        let g: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let d = Dataset::new(y.clone(), x, DMatrix::zeros(9, 0), g, vec!["0".into(), "1".into(), "2".into()]).unwrap();
        let s = SufficientStats::precompute(&d);
        let total: f64 = s.group_sum_y.iter().sum();
        assert!((total - y.sum()).abs() <= 1e-12 * y.abs().sum());
        let sx = s.group_sum_x.iter().fold(DVector::zeros(3), |a, b| a + b);
        let direct = d.x().row_sum().transpose();
        assert!((sx - direct).amax() < 1e-12);
        assert_eq!(s.gram_xx.transpose(), s.gram_xx);
    }

    #[test]
    fn radon_m0_gram_diagonal_counts_floors() {
        let t = crate::radon::RadonTable::bundled();
        let (d, _) = crate::radon::build_radon_design(&t, crate::radon::RadonModel::M0).unwrap();
        let s = SufficientStats::precompute(&d);
        assert_eq!((s.gram_xx[(0, 0)], s.gram_xx[(1, 1)]), (766.0, 153.0));
        assert_eq!(s.gram_xx[(0, 1)], 0.0);
    }
}

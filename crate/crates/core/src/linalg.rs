//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

/// Singular values in descending order. Empty matrices have none.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values `>= rtol * σ_max`. A zero matrix has rank 0.
pub fn numerical_rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&smax) if smax > 0.0 => s.iter().filter(|&&x| x >= rtol * smax).count(),
        _ => 0,
    }
}

/// Thin SVD keeping only the singular triplets with `σ >= rtol * σ_max`.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// Left singular vectors, `rows × r`.
    pub u: DMatrix<f64>,
    /// Retained singular values, descending.
    pub s: DVector<f64>,
    /// Right singular vectors, `cols × r`.
    pub v: DMatrix<f64>,
}

impl TruncatedSvd {
    pub fn new(m: &DMatrix<f64>, rtol: f64) -> Self {
        let (rows, cols) = m.shape();
        if rows == 0 || cols == 0 {
            return Self {
                u: DMatrix::zeros(rows, 0),
                s: DVector::zeros(0),
                v: DMatrix::zeros(cols, 0),
            };
        }
        let svd = m.clone().svd(true, true);
        let u_full = svd.u.expect("requested U");
        let vt_full = svd.v_t.expect("requested V^T");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let smax = order.first().map(|&i| svd.singular_values[i]).unwrap_or(0.0);
        let keep: Vec<usize> = if smax > 0.0 {
            order
                .into_iter()
                .filter(|&i| svd.singular_values[i] >= rtol * smax)
                .collect()
        } else {
            Vec::new()
        };
        let r = keep.len();
        let mut u = DMatrix::zeros(rows, r);
        let mut v = DMatrix::zeros(cols, r);
        let mut s = DVector::zeros(r);
        for (k, &i) in keep.iter().enumerate() {
            u.set_column(k, &u_full.column(i));
            v.set_column(k, &vt_full.row(i).transpose());
            s[k] = svd.singular_values[i];
        }
        Self { u, s, v }
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `U_r Σ_r V_rᵀ`.
    pub fn recompose(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (k, mut col) in us.column_iter_mut().enumerate() {
            col *= self.s[k];
        }
        us * self.v.transpose()
    }

    /// Minimum-norm least-squares solution of `m x ≈ b` using only the
    /// retained triplets.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut ub = self.u.transpose() * b;
        for (k, mut row) in ub.row_iter_mut().enumerate() {
            row /= self.s[k];
        }
        &self.v * ub
    }

    /// Component of `b` orthogonal to the retained column space.
    pub fn range_residual(&self, b: &DVector<f64>) -> DVector<f64> {
        b - &self.u * (self.u.transpose() * b)
    }
}

/// Minimum-norm least squares `argmin ‖a x − b‖` with relative singular
/// value cutoff `rtol`.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    TruncatedSvd::new(a, rtol).solve(b)
}

/// Wrap an angle difference into `(−π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_values_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 10.0, 0.0, 0.0]);
        assert_eq!(singular_values(&m), vec![10.0, 1.0]);
    }

    #[test]
    fn rank_of_zero_and_rank_deficient() {
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 3), 1e-12), 0);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        assert_eq!(numerical_rank(&m, 1e-12), 1);
    }

    #[test]
    fn truncated_solve_is_min_norm() {
        // x1 + x2 = 2 has min-norm solution (1, 1).
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DMatrix::from_row_slice(1, 1, &[2.0]);
        let x = lstsq_min_norm(&a, &b, 1e-12);
        assert!((x[(0, 0)] - 1.0).abs() < 1e-12 && (x[(1, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_drops_tiny_directions() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1e-16, 0.0, 1e-16]);
        let t = TruncatedSvd::new(&m, 1e-6);
        assert_eq!(t.rank(), 1);
        assert!((t.recompose() - &m).norm() < 1e-15);
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(2.0 * PI - 0.1) + 0.1).abs() < 1e-12);
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert_eq!(wrap_angle(0.25), 0.25);
    }
}

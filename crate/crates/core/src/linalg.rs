//! Thin wrappers over nalgebra for the dense solves the estimators need.

use nalgebra::{DMatrix, DVector};

/// Solve `A x = b` for symmetric positive (semi)definite `A`.
///
/// Falls back to adding a growing diagonal jitter when the Cholesky
/// factorisation fails. Returns `None` only if every attempt fails.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut jitter = 1e-12 * scale;
    for _ in 0..12 {
        let mut shifted = a.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(ch) = shifted.cholesky() {
            return Some(ch.solve(b));
        }
        jitter *= 10.0;
    }
    None
}

/// Row-major `rows × cols` slice as a matrix.
pub fn from_rows(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

/// Thin SVD truncated to `rank`, returned as `(U·√S, V·√S)` so that their
/// product `U√S (V√S)ᵀ` is the best rank-`rank` approximation.
pub fn balanced_factors(m: &DMatrix<f64>, rank: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let rank = rank.min(order.len());
    let mut left = DMatrix::zeros(m.nrows(), rank);
    let mut right = DMatrix::zeros(m.ncols(), rank);
    for (r, &idx) in order.iter().take(rank).enumerate() {
        let s = svd.singular_values[idx].sqrt();
        for i in 0..m.nrows() {
            left[(i, r)] = u[(i, idx)] * s;
        }
        for j in 0..m.ncols() {
            right[(j, r)] = v_t[(idx, j)] * s;
        }
    }
    (left, right)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_factors_reconstruct_full_rank() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 7.0]);
        let (l, r) = balanced_factors(&m, 2);
        let back = &l * r.transpose();
        assert!((back - &m).abs().max() < 1e-12);
        let (l1, r1) = balanced_factors(&m, 1);
        assert_eq!(l1.ncols(), 1);
        assert!(((&l1 * r1.transpose()) - &m).norm() < m.norm());
    }

    #[test]
    fn spd_solve_with_singular_matrix_uses_jitter() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 2.0]);
        let x = solve_spd(&a, &b).unwrap();
        assert!(((&a * &x) - &b).norm() < 1e-6);
    }
}

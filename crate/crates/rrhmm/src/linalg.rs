//! Small dense linear-algebra helpers on top of nalgebra's SVD.

use nalgebra::{DMatrix, DVector};

/// Singular values of `a` in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let svd = a.clone().svd(false, false);
    svd.singular_values.iter().cloned().collect()
}

/// The i-th largest singular value (1-based); zero when `i` exceeds the
/// number of singular values, so rank probes of thin matrices read naturally.
pub fn sigma(a: &DMatrix<f64>, i: usize) -> f64 {
    let sv = singular_values(a);
    if i == 0 || i > sv.len() {
        0.0
    } else {
        sv[i - 1]
    }
}

/// Count of singular values at or above `rel_tol` times the largest.
pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(a);
    let largest = sv.first().copied().unwrap_or(0.0);
    if largest <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s >= rel_tol * largest).count()
}

/// Moore-Penrose pseudoinverse with a relative singular-value cutoff:
/// singular values below `rcond * sigma_max` are treated as zero.
pub fn pinv(a: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = if smax > 0.0 { rcond * smax } else { f64::MAX };
    svd.pseudo_inverse(cut)
        .expect("cutoff is non-negative by construction")
}

/// Top-`k` left singular vectors of `a` plus the full descending spectrum.
///
/// Column signs are fixed deterministically: the entry of largest magnitude
/// in each column is made positive, with magnitude ties resolved toward the
/// lower row index. Repeated runs therefore produce identical bases.
pub fn top_left_singular(a: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, Vec<f64>) {
    let svd = a.clone().svd(true, false);
    let u_full = svd.u.expect("left singular vectors were requested");
    let spectrum: Vec<f64> = svd.singular_values.iter().cloned().collect();
    let mut u = DMatrix::zeros(a.nrows(), k);
    for j in 0..k {
        u.set_column(j, &u_full.column(j));
    }
    fix_column_signs(&mut u);
    (u, spectrum)
}

/// Make the largest-magnitude entry of each column positive (ties to the
/// lower index).
pub fn fix_column_signs(u: &mut DMatrix<f64>) {
    for j in 0..u.ncols() {
        let mut pivot = 0;
        let mut best = f64::NEG_INFINITY;
        for i in 0..u.nrows() {
            let mag = u[(i, j)].abs();
            if mag > best {
                best = mag;
                pivot = i;
            }
        }
        if u[(pivot, j)] < 0.0 {
            for i in 0..u.nrows() {
                u[(i, j)] = -u[(i, j)];
            }
        }
    }
}

/// Maximum absolute entry of `a`.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |acc: f64, &v| acc.max(v.abs()))
}

/// Maximum absolute column sum (the induced 1-norm).
pub fn norm_l1(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Minimum-residual solution of `a x = b` via SVD, together with the
/// residual norm `||a x - b||_2`.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = if smax > 0.0 { 1e-13 * smax } else { f64::MAX };
    let x = svd
        .solve(b, eps)
        .expect("solve cannot fail when both factors are requested")
        .column(0)
        .into_owned();
    let residual = (a * &x - b).norm();
    (x, residual)
}

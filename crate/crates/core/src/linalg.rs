//! Small dense helpers on top of nalgebra's SVD.

use nalgebra::{DMatrix, DVector};

/// Singular values in descending order. Empty for a matrix with a zero dimension.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Ratio of the largest to the smallest singular value of a square matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Solves `a x = b` through the SVD of `a`, refusing when `cond(a) > max_cond`.
///
/// On refusal the offending condition number is returned as the error.
pub fn svd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, max_cond: f64) -> Result<DMatrix<f64>, f64> {
    let svd = a.clone().svd(true, true);
    let hi = svd.singular_values.max();
    let lo = svd.singular_values.min();
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond <= max_cond) {
        return Err(cond);
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let inv_s = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / s));
    Ok(v_t.transpose() * inv_s * u.transpose() * b)
}

/// `(X'WX)^{-1} X'W` through the SVD of `L'X`, where `W = LL'`, so the
/// normal equations are never formed.
///
/// Refuses when `cond(X'WX) > max_cond` and returns that condition number;
/// `None` from the Cholesky factorization means `W` is not positive definite.
pub fn weighted_ls_operator(x: &DMatrix<f64>, w: &DMatrix<f64>, max_cond: f64) -> Option<Result<DMatrix<f64>, f64>> {
    let l = w.clone().cholesky()?.l();
    let a = l.transpose() * x;
    let svd = a.svd(true, true);
    let hi = svd.singular_values.max();
    let lo = svd.singular_values.min();
    let cond = if lo > 0.0 { (hi / lo).powi(2) } else { f64::INFINITY };
    if !(cond <= max_cond) {
        return Some(Err(cond));
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let inv_s = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / s));
    Some(Ok(v_t.transpose() * inv_s * u.transpose() * l.transpose()))
}

/// Moore-Penrose pseudo-inverse, truncating singular values below `rel_tol * σ_max`.
pub fn pinv(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return DMatrix::zeros(a.ncols(), a.nrows());
    }
    let svd = a.clone().svd(true, true);
    let cut = svd.singular_values.max() * rel_tol;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let inv_s = DMatrix::from_diagonal(&svd.singular_values.map(|s| if s > cut { 1.0 / s } else { 0.0 }));
    v_t.transpose() * inv_s * u.transpose()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Root mean square, i.e. the standard deviation of a mean-zero vector with divisor `n`.
pub fn rms(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Sample variance with divisor `n - 1`; zero for fewer than two values.
pub fn sample_var(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

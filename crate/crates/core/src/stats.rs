//! Small descriptive-statistics and covariance helpers shared by the modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative ridge added to a singular covariance diagonal, as a fraction of trace/dim.
pub const RIDGE_FACTOR: f64 = 1e-8;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the n-1 denominator.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (n - 1) as f64
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    covariance(xs, ys) / (variance(xs) * variance(ys)).sqrt()
}

/// Sample covariance matrix of the rows of `data` (observations x variables).
pub fn covariance_matrix(data: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = data.shape();
    let means = data.row_mean();
    let mut centered = data.clone();
    for j in 0..p {
        for i in 0..n {
            centered[(i, j)] -= means[j];
        }
    }
    let denom = (n.max(2) - 1) as f64;
    (centered.transpose() * &centered) / denom
}

/// Sample quantile with linear interpolation between order statistics
/// (the default definition in R and NumPy).
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    assert!(!xs.is_empty() && (0.0..=1.0).contains(&q));
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Ranks from 1 to n with ties given their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Relative pivot below which a column counts as a linear combination of
/// the columns before it.
pub const COLLINEARITY_TOL: f64 = 1e-10;

/// Columns of a Gram matrix `X'X` that are (numerically) linear combinations
/// of earlier columns, found by a Cholesky sweep that skips dependent columns.
/// Zero columns are always reported.
pub fn dependent_columns(gram: &DMatrix<f64>) -> Vec<usize> {
    let p = gram.nrows();
    let mut l = DMatrix::<f64>::zeros(p, p);
    let mut kept: Vec<usize> = Vec::new();
    let mut dependent = Vec::new();
    for k in 0..p {
        let diag = gram[(k, k)];
        let resid = diag - kept.iter().map(|&j| l[(k, j)] * l[(k, j)]).sum::<f64>();
        if !(diag > 0.0) || resid <= COLLINEARITY_TOL * diag {
            dependent.push(k);
            continue;
        }
        let pivot = resid.sqrt();
        l[(k, k)] = pivot;
        for i in k + 1..p {
            let s = gram[(i, k)] - kept.iter().map(|&j| l[(i, j)] * l[(k, j)]).sum::<f64>();
            l[(i, k)] = s / pivot;
        }
        kept.push(k);
    }
    dependent
}

/// Cholesky factor of a covariance matrix, regularized with a small ridge when
/// the matrix is not positive definite.
#[derive(Debug, Clone)]
pub struct Whitener {
    chol: Cholesky<f64, Dyn>,
    /// Ridge actually added to the diagonal (0 when none was needed).
    pub ridge: f64,
}

impl Whitener {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        if let Some(chol) = Cholesky::new(cov.clone()) {
            return Ok(Whitener { chol, ridge: 0.0 });
        }
        let dim = cov.nrows().max(1) as f64;
        let ridge = RIDGE_FACTOR * cov.trace() / dim;
        if !(ridge > 0.0) {
            return Err(Error::SingularCovariance);
        }
        let mut reg = cov.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += ridge;
        }
        let chol = Cholesky::new(reg).ok_or(Error::SingularCovariance)?;
        Ok(Whitener { chol, ridge })
    }

    /// Returns L⁻¹ x, so that ‖L⁻¹(x − y)‖ is the Mahalanobis distance.
    pub fn whiten(&self, x: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(x)
            .expect("cholesky factor has a positive diagonal")
    }

    /// The (possibly regularized) inverse covariance matrix.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

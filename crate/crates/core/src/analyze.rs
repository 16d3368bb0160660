//! Outcome analysis on the matched quadruples: the fixed-effects
//! difference-in-differences working model, Rubin pooling across imputations
//! and dose-scaled effects.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::distances::trajectory;
use crate::error::{Error, Result};
use crate::impute::ImputedDataset;
use crate::ingest::csvio::create;
use crate::ingest::IndividualRecord;
use crate::match_nonbipartite::{trajectory_names, QuadMatch};
use crate::match_bipartite::ClusterPair;
use crate::stats::dependent_columns;

/// Name of the exposure-change regressor.
pub const EXPOSURE_TERM: &str = "z_diff";

/// One row of the working model: a pair within its matched set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRow {
    /// Index of the matched set (quadruple).
    pub set: usize,
    pub y_diff: f64,
    pub z_diff: f64,
    /// Early then late covariates.
    pub x: Vec<f64>,
}

fn outcome(outcomes: &HashMap<String, f64>, id: &str) -> Result<f64> {
    outcomes
        .get(id)
        .copied()
        .ok_or_else(|| Error::InvalidInput(format!("no outcome for cluster {id}")))
}

fn model_row(set: usize, p: &ClusterPair, outcomes: &HashMap<String, f64>) -> Result<ModelRow> {
    Ok(ModelRow {
        set,
        y_diff: outcome(outcomes, &p.late.cluster_id)? - outcome(outcomes, &p.early.cluster_id)?,
        z_diff: p.z_diff,
        x: trajectory(p),
    })
}

/// The two rows (BEC first) contributed by every quadruple, with outcome
/// changes taken from the cluster means in `outcomes`.
pub fn working_model_rows(quads: &[QuadMatch], outcomes: &HashMap<String, f64>) -> Result<Vec<ModelRow>> {
    let mut rows = Vec::with_capacity(2 * quads.len());
    for (i, q) in quads.iter().enumerate() {
        rows.push(model_row(i, &q.bec, outcomes)?);
        rows.push(model_row(i, &q.sec, outcomes)?);
    }
    Ok(rows)
}

/// Regressor names in coefficient order: the exposure change, then the 24
/// covariate columns.
pub fn regressor_names() -> Vec<String> {
    std::iter::once(EXPOSURE_TERM.to_string()).chain(trajectory_names()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub beta1: f64,
    pub se_beta1: f64,
    pub t_beta1: f64,
    pub residual_df: usize,
    /// Coefficient names, aligned with `coefficients` and `std_errors`. The
    /// common intercept is absorbed by the matched-set effects and not reported.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub rss: f64,
    pub n_sets: usize,
}

impl RegressionFit {
    pub fn t_value(&self, name: &str) -> Option<f64> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(self.coefficients[k] / self.std_errors[k])
    }
}

/// Ordinary least squares with classical standard errors.
pub(crate) fn ols(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<(DVector<f64>, DVector<f64>, f64, usize)> {
    let (n, p) = x.shape();
    let dependent = dependent_columns(&(x.transpose() * x));
    if !dependent.is_empty() {
        return Err(Error::Collinear(dependent.iter().map(|&k| names[k].clone()).collect()));
    }
    if n <= p {
        return Err(Error::InsufficientDf { df: n as i64 - p as i64, needed: 1 });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Collinear(names.to_vec()))?;
    let resid = y - x * &beta;
    let rss = resid.dot(&resid);
    let df = n - p;
    let sigma2 = rss / df as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Collinear(names.to_vec()))?;
    let se = DVector::from_fn(p, |k, _| (sigma2 * r_inv.row(k).norm_squared()).sqrt());
    Ok((beta, se, rss, df))
}

/// Fits the working model with one fixed effect per matched set.
///
/// Every set holds exactly two rows, so the set effects are removed by
/// differencing the two rows (BEC minus SEC) and regressing the differenced
/// outcome change on the differenced exposure change and covariates without
/// an intercept. This reproduces the dummy-variable fit exactly, including
/// the residual degrees of freedom, I − 25.
pub fn fit_working_model(quads: &[QuadMatch], outcomes: &HashMap<String, f64>) -> Result<RegressionFit> {
    let rows = working_model_rows(quads, outcomes)?;
    fit_differenced(&rows)
}

/// Fits the working model on every completed dataset, in parallel.
pub fn fit_imputed(
    quads: &[QuadMatch],
    base: &[IndividualRecord],
    datasets: &[ImputedDataset],
) -> Result<Vec<RegressionFit>> {
    datasets
        .par_iter()
        .map(|ds| fit_working_model(quads, &ds.cluster_means(base)))
        .collect()
}

/// Differenced fit from explicit rows; rows must come in consecutive pairs
/// sharing a set index.
pub fn fit_differenced(rows: &[ModelRow]) -> Result<RegressionFit> {
    if !rows.len().is_multiple_of(2) || rows.chunks(2).any(|c| c[0].set != c[1].set) {
        return Err(Error::InvalidInput("rows must come in pairs from the same matched set".into()));
    }
    let names = regressor_names();
    let n_sets = rows.len() / 2;
    let p = names.len();
    if n_sets <= p {
        return Err(Error::InsufficientDf { df: n_sets as i64 - p as i64, needed: 1 });
    }
    let x = DMatrix::from_fn(n_sets, p, |i, k| {
        let (a, b) = (&rows[2 * i], &rows[2 * i + 1]);
        if k == 0 { a.z_diff - b.z_diff } else { a.x[k - 1] - b.x[k - 1] }
    });
    let y = DVector::from_fn(n_sets, |i, _| rows[2 * i].y_diff - rows[2 * i + 1].y_diff);
    let (beta, se, rss, df) = ols(&x, &y, &names)?;
    Ok(RegressionFit {
        beta1: beta[0],
        se_beta1: se[0],
        t_beta1: beta[0] / se[0],
        residual_df: df,
        names,
        coefficients: beta.iter().copied().collect(),
        std_errors: se.iter().copied().collect(),
        rss,
        n_sets,
    })
}

/// Rubin's-rule combination of one scalar estimate across imputations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledEstimate {
    pub estimate: f64,
    pub within_var: f64,
    pub between_var: f64,
    pub total_var: f64,
    /// Infinite when the between-imputation variance is zero.
    pub df_rubin: f64,
    pub ci95: (f64, f64),
    pub p_value: f64,
    pub m: usize,
}

impl PooledEstimate {
    pub fn se(&self) -> f64 {
        self.total_var.sqrt()
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci95.0 <= value && value <= self.ci95.1
    }
}

/// Sum after sorting, so the result does not depend on input order.
fn ordered_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Pools per-imputation estimates and their squared standard errors.
pub fn rubin_pool_values(estimates: &[f64], variances: &[f64]) -> Result<PooledEstimate> {
    let m = estimates.len();
    if m < 2 || variances.len() != m {
        return Err(Error::InvalidInput(format!(
            "pooling needs at least 2 estimates with matching variances, got {m} and {}",
            variances.len()
        )));
    }
    let mf = m as f64;
    let estimate = ordered_sum(estimates.iter().copied()) / mf;
    let within_var = ordered_sum(variances.iter().copied()) / mf;
    let between_var = ordered_sum(estimates.iter().map(|e| (e - estimate) * (e - estimate))) / (mf - 1.0);
    let inflated = (1.0 + 1.0 / mf) * between_var;
    let total_var = within_var + inflated;
    let df_rubin = if between_var > 0.0 {
        (mf - 1.0) * (1.0 + within_var / inflated).powi(2)
    } else {
        f64::INFINITY
    };
    let se = total_var.sqrt();
    let (crit, p_value) = if df_rubin.is_finite() {
        let t = StudentsT::new(0.0, 1.0, df_rubin).expect("positive df");
        (t.inverse_cdf(0.975), 2.0 * t.sf((estimate / se).abs()))
    } else {
        let z = Normal::standard();
        (z.inverse_cdf(0.975), 2.0 * z.sf((estimate / se).abs()))
    };
    Ok(PooledEstimate {
        estimate,
        within_var,
        between_var,
        total_var,
        df_rubin,
        ci95: (estimate - crit * se, estimate + crit * se),
        p_value,
        m,
    })
}

/// Pools the exposure coefficient across the fits of the imputed datasets.
pub fn rubin_pool(fits: &[RegressionFit]) -> Result<PooledEstimate> {
    let est: Vec<f64> = fits.iter().map(|f| f.beta1).collect();
    let var: Vec<f64> = fits.iter().map(|f| f.se_beta1 * f.se_beta1).collect();
    rubin_pool_values(&est, &var)
}

/// Pools every coefficient; fits must share the same design.
pub fn rubin_pool_all(fits: &[RegressionFit]) -> Result<Vec<(String, PooledEstimate)>> {
    let first = fits.first().ok_or_else(|| Error::InvalidInput("no fits to pool".into()))?;
    if fits.iter().any(|f| f.names != first.names) {
        return Err(Error::InvalidInput("fits do not share a design".into()));
    }
    first
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let est: Vec<f64> = fits.iter().map(|f| f.coefficients[k]).collect();
            let var: Vec<f64> = fits.iter().map(|f| f.std_errors[k].powi(2)).collect();
            Ok((name.clone(), rubin_pool_values(&est, &var)?))
        })
        .collect()
}

/// Effect of a reduction in prevalence of size `dose`, in grams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseEffect {
    pub dose: f64,
    pub effect: f64,
    pub ci95: (f64, f64),
}

/// A reduction of `dose` changes the outcome by −estimate × dose.
pub fn dose_effect(pooled: &PooledEstimate, dose: f64) -> DoseEffect {
    let a = -pooled.ci95.0 * dose;
    let b = -pooled.ci95.1 * dose;
    DoseEffect {
        dose,
        effect: -pooled.estimate * dose,
        ci95: (a.min(b), a.max(b)),
    }
}

/// Writes the pooled coefficient table (regressor, estimate, 95% CI, p-value).
pub fn write_pooled_table(path: &Path, pooled: &[(String, PooledEstimate)]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["regressor", "estimate", "ci_lower", "ci_upper", "p_value", "df_rubin"])?;
    for (name, p) in pooled {
        w.write_record([
            name.clone(),
            p.estimate.to_string(),
            p.ci95.0.to_string(),
            p.ci95.1.to_string(),
            p.p_value.to_string(),
            p.df_rubin.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Plain-text rendering of the pooled table.
pub fn format_pooled_table(pooled: &[(String, PooledEstimate)]) -> String {
    let mut out = format!("{:<28} {:>12} {:>26} {:>10}\n", "Regressor", "Estimate", "95% CI", "p-value");
    for (name, p) in pooled {
        out.push_str(&format!(
            "{:<28} {:>12.3} {:>26} {:>10.4}\n",
            name,
            p.estimate,
            format!("({:.3}, {:.3})", p.ci95.0, p.ci95.1),
            p.p_value
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rubin_hand_example() {
        let p = rubin_pool_values(&[1.0, 2.0, 3.0], &[0.1, 0.1, 0.1]).unwrap();
        assert_eq!(p.estimate, 2.0);
        assert!((p.within_var - 0.1).abs() < 1e-15);
        assert_eq!(p.between_var, 1.0);
        assert!((p.total_var - 1.433_333_333_333_333_3).abs() < 1e-12);
        assert_eq!(p.total_var, p.within_var + (1.0 + 1.0 / 3.0) * p.between_var);
        let mid = 0.5 * (p.ci95.0 + p.ci95.1);
        assert!((mid - p.estimate).abs() < 1e-12);
    }

    #[test]
    fn identical_fits_have_no_between_variance() {
        let p = rubin_pool_values(&[5.0; 4], &[0.25; 4]).unwrap();
        assert_eq!(p.between_var, 0.0);
        assert_eq!(p.total_var, p.within_var);
        assert!(p.df_rubin.is_infinite());
        assert!((p.ci95.1 - 5.0 - 1.959_963_984_540_054 * 0.5).abs() < 1e-9);
    }

    #[test]
    fn symmetric_estimates_pool_to_zero() {
        let p = rubin_pool_values(&[-3.0, -1.0, 1.0, 3.0], &[1.0; 4]).unwrap();
        assert_eq!(p.estimate, 0.0);
        assert!(rubin_pool_values(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn dose_examples() {
        let pooled = rubin_pool_values(&[-155.747, -155.747], &[1.0, 1.0]).unwrap();
        assert_eq!(format!("{:.3}", dose_effect(&pooled, 0.635).effect), "98.899");
        assert_eq!(format!("{:.3}", dose_effect(&pooled, 0.65).effect), "101.236");
        assert_eq!(dose_effect(&pooled, 0.0).effect, 0.0);
        let (a, b) = (dose_effect(&pooled, 0.25), dose_effect(&pooled, 0.5));
        assert_eq!(dose_effect(&pooled, 0.75).effect, a.effect + b.effect);
    }
}

//! Robustness of the exposure coefficient to an omitted confounder.
//!
//! The confounder is parameterized by its partial R² with the outcome and
//! with the exposure change, so robustness values follow in closed form.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::analyze::RegressionFit;
use crate::error::{Error, Result};
use crate::ingest::csvio::create;

/// Share of residual variance explained by a regressor with t-value `t`.
pub fn partial_r2(t: f64, df: usize) -> f64 {
    let t2 = t * t;
    t2 / (t2 + df as f64)
}

/// Robustness value for a partial Cohen's f.
pub fn rv_from_f(f: f64) -> f64 {
    let f2 = f * f;
    0.5 * ((f2 * f2 + 4.0 * f2).sqrt() - f2)
}

/// Inverse of [`rv_from_f`].
pub fn f_from_rv(rv: f64) -> f64 {
    rv / (1.0 - rv).sqrt()
}

/// Robustness values for the sign of the estimate and for its significance at
/// level `alpha`. The critical value uses `df - 1` degrees of freedom.
pub fn robustness_values(t: f64, df: usize, alpha: f64) -> (f64, f64) {
    assert!(df >= 2, "robustness values need df >= 2");
    let f = t.abs() / (df as f64).sqrt();
    let dfc = (df - 1) as f64;
    let crit = StudentsT::new(0.0, 1.0, dfc)
        .expect("positive df")
        .inverse_cdf(1.0 - alpha / 2.0);
    let f_alpha = (f - crit / dfc.sqrt()).max(0.0);
    (rv_from_f(f), rv_from_f(f_alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub estimate: f64,
    pub se: f64,
    pub t_value: f64,
    pub rv_sign: f64,
    pub rv_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub df: usize,
    pub alpha: f64,
    pub rows: Vec<SensitivityRow>,
    pub average: SensitivityRow,
    /// Mean partial R² of each benchmark covariate across imputations.
    pub benchmarks: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityOptions {
    pub alpha: f64,
    /// Residual df used for the robustness values; the fits' own df when unset.
    pub df: Option<usize>,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        Self { alpha: 0.05, df: None }
    }
}

pub fn sensitivity_row(estimate: f64, se: f64, df: usize, alpha: f64) -> SensitivityRow {
    let t_value = estimate / se;
    let (rv_sign, rv_alpha) = robustness_values(t_value, df, alpha);
    SensitivityRow { estimate, se, t_value, rv_sign, rv_alpha }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn run_sensitivity(
    fits: &[RegressionFit],
    benchmark_covariates: &[String],
    options: &SensitivityOptions,
) -> Result<SensitivityReport> {
    let first = fits.first().ok_or_else(|| Error::InvalidInput("no fits for sensitivity analysis".into()))?;
    let df = options.df.unwrap_or(first.residual_df);
    if df < 2 {
        return Err(Error::InsufficientDf { df: df as i64, needed: 2 });
    }
    if !(options.alpha > 0.0 && options.alpha < 1.0) {
        return Err(Error::validation("alpha", "must lie in (0, 1)"));
    }
    let rows: Vec<SensitivityRow> = fits
        .iter()
        .map(|f| sensitivity_row(f.beta1, f.se_beta1, df, options.alpha))
        .collect();
    let average = SensitivityRow {
        estimate: mean(rows.iter().map(|r| r.estimate)),
        se: mean(rows.iter().map(|r| r.se)),
        t_value: mean(rows.iter().map(|r| r.t_value)),
        rv_sign: mean(rows.iter().map(|r| r.rv_sign)),
        rv_alpha: mean(rows.iter().map(|r| r.rv_alpha)),
    };
    let benchmarks = benchmark_covariates
        .iter()
        .map(|name| {
            let ts = fits
                .iter()
                .map(|f| f.t_value(name).ok_or_else(|| Error::UnknownColumn(name.clone())))
                .collect::<Result<Vec<f64>>>()?;
            Ok((name.clone(), mean(ts.iter().map(|&t| partial_r2(t, df)))))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SensitivityReport { df, alpha: options.alpha, rows, average, benchmarks })
}

/// Writes one row per imputation followed by the average row; robustness
/// values are in percent.
pub fn write_sensitivity_csv(path: &Path, report: &SensitivityReport) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["imputation", "estimate", "se", "t_value", "rv_sign_pct", "rv_alpha_pct"])?;
    let labelled = report
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| ((i + 1).to_string(), r))
        .chain(std::iter::once(("average".to_string(), &report.average)));
    for (label, r) in labelled {
        w.write_record([
            label,
            format!("{:.3}", r.estimate),
            format!("{:.3}", r.se),
            format!("{:.3}", r.t_value),
            format!("{:.1}", 100.0 * r.rv_sign),
            format!("{:.1}", 100.0 * r.rv_alpha),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn format_sensitivity(report: &SensitivityReport) -> String {
    let mut out = format!(
        "{:>10} {:>12} {:>10} {:>9} {:>9} {:>9}\n",
        "Imputation", "Estimate", "SE", "t", "RV sign", "RV alpha"
    );
    let line = |label: &str, r: &SensitivityRow| {
        format!(
            "{:>10} {:>12.3} {:>10.3} {:>9.3} {:>8.1}% {:>8.1}%\n",
            label,
            r.estimate,
            r.se,
            r.t_value,
            100.0 * r.rv_sign,
            100.0 * r.rv_alpha
        )
    };
    for (i, r) in report.rows.iter().enumerate() {
        out.push_str(&line(&(i + 1).to_string(), r));
    }
    out.push_str(&line("Average", &report.average));
    out.push_str(&format!("residual df {}, alpha {}\n", report.df, report.alpha));
    for (name, r2) in &report.benchmarks {
        out.push_str(&format!("benchmark {name}: partial R2 {:.2}%\n", 100.0 * r2));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn partial_r2_examples() {
        assert_eq!(partial_r2(0.0, 10), 0.0);
        assert_eq!(partial_r2(1.0, 1), 0.5);
        assert!((partial_r2(3.236, 2539) - 0.004_107_398).abs() < 1e-9);
    }

    #[test]
    fn zero_t_has_zero_robustness() {
        assert_eq!(robustness_values(0.0, 100, 0.05), (0.0, 0.0));
    }

    #[test]
    fn reference_row() {
        let r = sensitivity_row(-155.847, 48.111, 1076, 0.05);
        assert_eq!(format!("{:.3}", r.t_value), "-3.239");
        assert_eq!(format!("{:.1}", 100.0 * r.rv_sign), "9.4");
        assert_eq!(format!("{:.1}", 100.0 * r.rv_alpha), "3.8");
    }

    proptest! {
        #[test]
        fn inversion_identity(t in -20.0f64..20.0, df in 2usize..5000) {
            let f = t.abs() / (df as f64).sqrt();
            let (rv, rv_alpha) = robustness_values(t, df, 0.05);
            prop_assert!((f_from_rv(rv) - f).abs() < 1e-10);
            prop_assert!((0.0..=1.0).contains(&rv));
            prop_assert!(rv_alpha <= rv);
        }

        #[test]
        fn monotone_in_t(a in 0.0f64..10.0, b in 0.0f64..10.0, df in 2usize..3000) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(robustness_values(lo, df, 0.05).0 <= robustness_values(hi, df, 0.05).0);
            prop_assert!(partial_r2(lo, df) <= partial_r2(hi, df));
            prop_assert!(partial_r2(hi, df) < 1.0);
        }
    }
}

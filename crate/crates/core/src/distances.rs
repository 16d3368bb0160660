//! Stage-one and stage-two distance matrices.
//!
//! Stage one compares early and late clusters by a rank-based Mahalanobis
//! distance over longitude and latitude, with a soft caliper. Stage two compares
//! stage-one pairs by the Mahalanobis distance between their 24-dimensional
//! covariate trajectories and penalizes pairs whose exposure changes are close.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{max_rank, GeoPoint};
use crate::match_bipartite::ClusterPair;
use crate::stats::{covariance, covariance_matrix, std_dev, Whitener};

/// Entry value marking a forbidden match (the diagonal of stage-two matrices).
pub const FORBIDDEN: f64 = f64::MAX;

pub const DEFAULT_CALIPER_MULTIPLIER: f64 = 0.2;
pub const DEFAULT_RHO_PRIME: f64 = 1000.0;
pub const DEFAULT_XI: f64 = 0.05;

/// Dense row-major distance matrix with a record of which entries were penalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<f64>,
    pub penalty_mask: Vec<bool>,
    /// Caliper used by stage one, if any.
    pub caliper: Option<f64>,
}

impl DistanceMatrix {
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>) -> Self {
        assert_eq!(entries.len(), rows * cols, "entry count does not match shape");
        DistanceMatrix {
            rows,
            cols,
            penalty_mask: vec![false; entries.len()],
            entries,
            caliper: None,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn penalized(&self, i: usize, j: usize) -> bool {
        self.penalty_mask[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Debug dump; forbidden entries are written as `inf`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        for i in 0..self.rows {
            let row: Vec<String> = self
                .row(i)
                .iter()
                .map(|&v| if v == FORBIDDEN { "inf".to_string() } else { v.to_string() })
                .collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Pooled covariance of the longitude and latitude rank vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankCovariance {
    pub sigma11: f64,
    pub sigma12: f64,
    pub sigma22: f64,
}

impl RankCovariance {
    /// Estimates the covariance from early and late points, ranking each
    /// coordinate within its own epoch and pooling the rank vectors.
    pub fn estimate(early: &[GeoPoint], late: &[GeoPoint]) -> Self {
        let ranks = EpochRanks::new(early, late);
        let x: Vec<f64> = ranks.x_early.iter().chain(&ranks.x_late).copied().collect();
        let y: Vec<f64> = ranks.y_early.iter().chain(&ranks.y_late).copied().collect();
        if x.len() < 2 {
            return RankCovariance { sigma11: 0.0, sigma12: 0.0, sigma22: 0.0 };
        }
        RankCovariance {
            sigma11: covariance(&x, &x),
            sigma12: covariance(&x, &y),
            sigma22: covariance(&y, &y),
        }
    }

    pub fn determinant(&self) -> f64 {
        self.sigma11 * self.sigma22 - self.sigma12 * self.sigma12
    }
}

struct EpochRanks {
    x_early: Vec<f64>,
    y_early: Vec<f64>,
    x_late: Vec<f64>,
    y_late: Vec<f64>,
}

impl EpochRanks {
    fn new(early: &[GeoPoint], late: &[GeoPoint]) -> Self {
        let rank = |pts: &[GeoPoint], f: fn(&GeoPoint) -> f64| -> Vec<f64> {
            max_rank(&pts.iter().map(f).collect::<Vec<_>>())
                .into_iter()
                .map(|r| r as f64)
                .collect()
        };
        EpochRanks {
            x_early: rank(early, |p| p.longitude_deg),
            y_early: rank(early, |p| p.latitude_deg),
            x_late: rank(late, |p| p.longitude_deg),
            y_late: rank(late, |p| p.latitude_deg),
        }
    }
}

/// Mahalanobis metric fitted to a sample.
///
/// Columns that are constant in the sample carry no information and every
/// difference along them is zero, so they are left out of the metric. The
/// remaining covariance gets a small ridge only if it is still singular.
#[derive(Debug, Clone)]
pub struct MahalanobisMetric {
    active: Vec<usize>,
    whitener: Option<Whitener>,
}

impl MahalanobisMetric {
    pub fn fit(data: &DMatrix<f64>) -> Result<Self> {
        let active: Vec<usize> = (0..data.ncols())
            .filter(|&j| {
                let first = data[(0, j)];
                data.column(j).iter().any(|&v| v != first)
            })
            .collect();
        if active.is_empty() {
            return Ok(MahalanobisMetric { active, whitener: None });
        }
        let sub = data.select_columns(&active);
        let whitener = Whitener::new(&covariance_matrix(&sub))?;
        if whitener.ridge > 0.0 {
            log::debug!("covariance regularized with ridge {}", whitener.ridge);
        }
        Ok(MahalanobisMetric {
            active,
            whitener: Some(whitener),
        })
    }

    /// Whitened coordinates of one observation; Euclidean distances between
    /// them are Mahalanobis distances.
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        match &self.whitener {
            None => Vec::new(),
            Some(w) => {
                let v = DVector::from_iterator(self.active.len(), self.active.iter().map(|&j| x[j]));
                w.whiten(&v).iter().copied().collect()
            }
        }
    }

    pub fn ridge(&self) -> f64 {
        self.whitener.as_ref().map_or(0.0, |w| w.ridge)
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Rank-based Mahalanobis distances between early (rows) and late (columns)
/// clusters, with `rho` added where the distance reaches the caliper.
///
/// Ranks are taken within each epoch; the covariance is estimated from the
/// pooled early and late rank vectors. The caliper is `caliper_multiplier`
/// times the standard deviation of all early-late distances; with a single
/// entry there is no spread to calibrate against and no caliper is applied.
pub fn stage1_distance_matrix(
    early: &[GeoPoint],
    late: &[GeoPoint],
    caliper_multiplier: f64,
    rho: f64,
) -> Result<DistanceMatrix> {
    if early.is_empty() || late.is_empty() {
        return Err(Error::InvalidInput(
            "stage-one distances need at least one cluster per epoch".into(),
        ));
    }
    let (m, n) = (early.len(), late.len());
    let EpochRanks { x_early: rx_e, y_early: ry_e, x_late: rx_l, y_late: ry_l } = EpochRanks::new(early, late);

    let pooled = DMatrix::from_fn(m + n, 2, |i, j| match (i < m, j) {
        (true, 0) => rx_e[i],
        (true, _) => ry_e[i],
        (false, 0) => rx_l[i - m],
        (false, _) => ry_l[i - m],
    });
    let metric = MahalanobisMetric::fit(&pooled)?;
    let we: Vec<Vec<f64>> = (0..m).map(|i| metric.transform(&[rx_e[i], ry_e[i]])).collect();
    let wl: Vec<Vec<f64>> = (0..n).map(|j| metric.transform(&[rx_l[j], ry_l[j]])).collect();

    let base: Vec<f64> = (0..m * n).map(|k| euclidean(&we[k / n], &wl[k % n])).collect();
    let caliper = (base.len() >= 2).then(|| caliper_multiplier * std_dev(&base));
    let penalty_mask: Vec<bool> = base
        .iter()
        .map(|&d| caliper.is_some_and(|c| d >= c))
        .collect();
    let entries = base
        .iter()
        .zip(&penalty_mask)
        .map(|(&d, &p)| if p { d + rho } else { d })
        .collect();
    Ok(DistanceMatrix {
        rows: m,
        cols: n,
        entries,
        penalty_mask,
        caliper,
    })
}

/// Covariate trajectory of a pair: early covariates followed by late covariates.
pub fn trajectory(pair: &ClusterPair) -> Vec<f64> {
    pair.early
        .covariates
        .iter()
        .chain(pair.late.covariates.iter())
        .copied()
        .collect()
}

/// Symmetric stage-two matrix over stage-one pairs.
///
/// Entry (s, t) is the Mahalanobis distance between the pairs' covariate
/// trajectories plus `rho_prime` when their exposure changes differ by less
/// than `xi` (in prevalence units). The diagonal is [`FORBIDDEN`].
pub fn stage2_distance_matrix(pairs: &[ClusterPair], rho_prime: f64, xi: f64) -> Result<DistanceMatrix> {
    if pairs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "stage-two distances need at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    let trajectories: Vec<Vec<f64>> = pairs.iter().map(trajectory).collect();
    let z_diff: Vec<f64> = pairs.iter().map(|p| p.z_diff).collect();
    stage2_from_parts(&trajectories, &z_diff, rho_prime, xi)
}

pub fn stage2_from_parts(
    trajectories: &[Vec<f64>],
    z_diff: &[f64],
    rho_prime: f64,
    xi: f64,
) -> Result<DistanceMatrix> {
    let n = trajectories.len();
    assert_eq!(n, z_diff.len());
    let dim = trajectories.first().map_or(0, Vec::len);
    let data = DMatrix::from_fn(n, dim, |i, j| trajectories[i][j]);
    let metric = MahalanobisMetric::fit(&data)?;
    let white: Vec<Vec<f64>> = trajectories.iter().map(|t| metric.transform(t)).collect();

    let rows: Vec<Vec<(f64, bool)>> = (0..n)
        .into_par_iter()
        .map(|s| {
            (0..n)
                .map(|t| {
                    if s == t {
                        return (FORBIDDEN, false);
                    }
                    // Evaluate with the lower index first so both halves agree bit for bit.
                    let (a, b) = if s < t { (s, t) } else { (t, s) };
                    let d = euclidean(&white[a], &white[b]);
                    let close = (z_diff[a] - z_diff[b]).abs() < xi;
                    (if close { d + rho_prime } else { d }, close)
                })
                .collect()
        })
        .collect();
    let (entries, penalty_mask) = rows.into_iter().flatten().unzip();
    Ok(DistanceMatrix {
        rows: n,
        cols: n,
        entries,
        penalty_mask,
        caliper: None,
    })
}

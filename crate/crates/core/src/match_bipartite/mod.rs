//! Stage-one matching: early-epoch clusters paired with late-epoch clusters
//! within each country by optimal assignment on the caliper-penalized
//! rank-based Mahalanobis distance.

mod assignment;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distances::{stage1_distance_matrix, DEFAULT_CALIPER_MULTIPLIER};
use crate::error::{Error, Result};
use crate::geo::{elevation_diff_m, spherical_distance_km, GeoPoint};
use crate::ingest::csvio::{column_index, create, fmt_opt, open, parse_f64};
use crate::ingest::{ClusterRecord, Epoch};
use crate::stats::{mean, pearson};

pub use assignment::{solve_assignment, Assignment};

pub const DEFAULT_MAX_KM: f64 = 100.0;
pub const DEFAULT_RHO: f64 = 1000.0;

/// An early-epoch cluster matched to a late-epoch cluster of the same country,
/// treated as one location observed twice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPair {
    pub pair_id: usize,
    pub early: ClusterRecord,
    pub late: ClusterRecord,
    pub distance_km: f64,
    pub elevation_diff_m: f64,
    pub z_early: f64,
    pub z_late: f64,
    pub z_diff: f64,
    pub y_early: Option<f64>,
    pub y_late: Option<f64>,
}

impl ClusterPair {
    pub fn new(pair_id: usize, early: ClusterRecord, late: ClusterRecord) -> Self {
        debug_assert_eq!(early.epoch, Epoch::Early);
        debug_assert_eq!(late.epoch, Epoch::Late);
        ClusterPair {
            pair_id,
            distance_km: spherical_distance_km(&early.location, &late.location),
            elevation_diff_m: elevation_diff_m(&early.location, &late.location),
            z_early: early.pfpr,
            z_late: late.pfpr,
            z_diff: late.pfpr - early.pfpr,
            y_early: early.mean_birthweight_g,
            y_late: late.mean_birthweight_g,
            early,
            late,
        }
    }

    pub fn country(&self) -> &str {
        &self.early.country
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Config {
    pub caliper_multiplier: f64,
    pub rho: f64,
    pub max_km: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            caliper_multiplier: DEFAULT_CALIPER_MULTIPLIER,
            rho: DEFAULT_RHO,
            max_km: DEFAULT_MAX_KM,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CountryAudit {
    pub country: String,
    pub n_early: usize,
    pub n_late: usize,
    pub matched: usize,
    /// Matched pairs whose distance reached the caliper.
    pub over_caliper: usize,
    pub caliper: Option<f64>,
    pub assignment_cost: f64,
    pub distance_dropped: usize,
    pub zero_pfpr_dropped: usize,
    pub retained: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage1Audit {
    pub countries: Vec<CountryAudit>,
    /// Countries without clusters in both epochs, with the reason.
    pub skipped: Vec<(String, String)>,
    pub matched: usize,
    pub distance_dropped: usize,
    pub zero_pfpr_dropped: usize,
    pub retained: usize,
}

/// Matches clusters within each country and applies the distance and
/// zero-exposure filters. Pair ids are assigned in country order.
pub fn run_stage1(clusters: &[ClusterRecord], cfg: &Stage1Config) -> Result<(Vec<ClusterPair>, Stage1Audit)> {
    let mut by_country: BTreeMap<&str, (Vec<&ClusterRecord>, Vec<&ClusterRecord>)> = BTreeMap::new();
    for c in clusters {
        let entry = by_country.entry(c.country.as_str()).or_default();
        match c.epoch {
            Epoch::Early => entry.0.push(c),
            Epoch::Late => entry.1.push(c),
        }
    }

    let mut audit = Stage1Audit::default();
    let mut work = Vec::new();
    for (country, (early, late)) in by_country {
        if early.is_empty() || late.is_empty() {
            let missing = if early.is_empty() { "early" } else { "late" };
            log::warn!("country {country} has no {missing} clusters; skipped");
            audit.skipped.push((country.to_string(), format!("no {missing} clusters")));
        } else {
            work.push((country, early, late));
        }
    }

    let results: Vec<(Vec<(ClusterRecord, ClusterRecord)>, CountryAudit)> = work
        .par_iter()
        .map(|(country, early, late)| match_country(country, early, late, cfg))
        .collect::<Result<_>>()?;

    let mut pairs = Vec::new();
    for (kept, country_audit) in results {
        for (e, l) in kept {
            pairs.push(ClusterPair::new(pairs.len(), e, l));
        }
        audit.matched += country_audit.matched;
        audit.distance_dropped += country_audit.distance_dropped;
        audit.zero_pfpr_dropped += country_audit.zero_pfpr_dropped;
        audit.retained += country_audit.retained;
        audit.countries.push(country_audit);
    }
    Ok((pairs, audit))
}

fn match_country(
    country: &str,
    early: &[&ClusterRecord],
    late: &[&ClusterRecord],
    cfg: &Stage1Config,
) -> Result<(Vec<(ClusterRecord, ClusterRecord)>, CountryAudit)> {
    let locs = |cs: &[&ClusterRecord]| cs.iter().map(|c| c.location).collect::<Vec<GeoPoint>>();
    let dist = stage1_distance_matrix(&locs(early), &locs(late), cfg.caliper_multiplier, cfg.rho)
        .map_err(|e| e.in_stage("stage1"))?;
    let assignment = solve_assignment(&dist)?;

    let mut audit = CountryAudit {
        country: country.to_string(),
        n_early: early.len(),
        n_late: late.len(),
        matched: assignment.pairs.len(),
        caliper: dist.caliper,
        assignment_cost: assignment.total,
        ..Default::default()
    };
    let mut kept = Vec::new();
    for &(i, j) in &assignment.pairs {
        let (e, l) = (early[i], late[j]);
        if dist.penalized(i, j) {
            audit.over_caliper += 1;
        }
        if spherical_distance_km(&e.location, &l.location) > cfg.max_km {
            audit.distance_dropped += 1;
        } else if e.pfpr == 0.0 && l.pfpr == 0.0 {
            audit.zero_pfpr_dropped += 1;
        } else {
            kept.push((e.clone(), l.clone()));
        }
    }
    audit.retained = kept.len();
    Ok((kept, audit))
}

/// Within-pair agreement summaries for stage one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Diagnostics {
    pub n_pairs: usize,
    pub longitude_correlation: f64,
    pub latitude_correlation: f64,
    pub mean_distance_km: f64,
    pub mean_abs_elevation_diff_m: f64,
    pub mean_z_early: f64,
    pub mean_z_late: f64,
}

pub fn stage1_diagnostics(pairs: &[ClusterPair]) -> Result<Stage1Diagnostics> {
    if pairs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "stage-one diagnostics need at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    let col = |f: &dyn Fn(&ClusterPair) -> f64| pairs.iter().map(f).collect::<Vec<f64>>();
    Ok(Stage1Diagnostics {
        n_pairs: pairs.len(),
        longitude_correlation: pearson(
            &col(&|p| p.early.location.longitude_deg),
            &col(&|p| p.late.location.longitude_deg),
        ),
        latitude_correlation: pearson(
            &col(&|p| p.early.location.latitude_deg),
            &col(&|p| p.late.location.latitude_deg),
        ),
        mean_distance_km: mean(&col(&|p| p.distance_km)),
        mean_abs_elevation_diff_m: mean(&col(&|p| p.elevation_diff_m.abs())),
        mean_z_early: mean(&col(&|p| p.z_early)),
        mean_z_late: mean(&col(&|p| p.z_late)),
    })
}

const PAIR_COLUMNS: [&str; 11] = [
    "pair_id",
    "country",
    "early_cluster_id",
    "late_cluster_id",
    "distance_km",
    "elevation_diff_m",
    "z_early",
    "z_late",
    "z_diff",
    "y_early",
    "y_late",
];

pub fn write_pairs(path: &Path, pairs: &[ClusterPair]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(PAIR_COLUMNS)?;
    for p in pairs {
        w.write_record([
            p.pair_id.to_string(),
            p.country().to_string(),
            p.early.cluster_id.clone(),
            p.late.cluster_id.clone(),
            p.distance_km.to_string(),
            p.elevation_diff_m.to_string(),
            p.z_early.to_string(),
            p.z_late.to_string(),
            p.z_diff.to_string(),
            fmt_opt(p.y_early),
            fmt_opt(p.y_late),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a pairs file and re-attaches the cluster records it refers to.
pub fn load_pairs(path: &Path, clusters: &[ClusterRecord]) -> Result<Vec<ClusterPair>> {
    let index: HashMap<(&str, &str, Epoch), &ClusterRecord> = clusters
        .iter()
        .map(|c| ((c.country.as_str(), c.cluster_id.as_str(), c.epoch), c))
        .collect();
    let mut reader = open(path)?;
    let headers = reader.headers()?.clone();
    let idx = PAIR_COLUMNS
        .iter()
        .map(|n| column_index(&headers, n))
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let field = |k: usize| row.get(idx[k]).unwrap_or("");
        let row_err = |name: &str, message: String| Error::Row {
            row: line,
            field: name.to_string(),
            message,
        };
        let pair_id = field(0)
            .parse::<usize>()
            .map_err(|e| row_err("pair_id", e.to_string()))?;
        let lookup = |k: usize, epoch: Epoch| {
            index
                .get(&(field(1), field(k), epoch))
                .map(|c| (*c).clone())
                .ok_or_else(|| row_err(PAIR_COLUMNS[k], format!("unknown {} cluster `{}`", epoch.as_str(), field(k))))
        };
        let pair = ClusterPair::new(pair_id, lookup(2, Epoch::Early)?, lookup(3, Epoch::Late)?);
        let z_diff = parse_f64(field(8)).map_err(|m| row_err("z_diff", m))?;
        if z_diff != pair.z_diff {
            return Err(row_err("z_diff", format!("{z_diff} disagrees with cluster exposures")));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::ingest::N_COVARIATES;

    pub(crate) fn cluster(id: &str, country: &str, epoch: Epoch, lon: f64, lat: f64, pfpr: f64) -> ClusterRecord {
        ClusterRecord {
            cluster_id: id.to_string(),
            country: country.to_string(),
            epoch,
            location: GeoPoint::new(lon, lat, 100.0),
            pfpr,
            covariates: [0.5; N_COVARIATES],
            mean_birthweight_g: Some(3200.0),
            n_individuals: 10,
        }
    }

    #[test]
    fn single_pair_is_forced() {
        // 0.045 degrees of longitude at the equator is about 5 km.
        let cs = [
            cluster("a", "X", Epoch::Early, 10.0, 0.0, 0.3),
            cluster("b", "X", Epoch::Late, 10.045, 0.0, 0.2),
        ];
        let (pairs, audit) = run_stage1(&cs, &Stage1Config::default()).unwrap();
        assert_eq!(pairs.len(), 1);
        assert!((pairs[0].distance_km - 5.0).abs() < 0.1);
        assert_eq!(pairs[0].z_diff, 0.2 - 0.3);
        assert_eq!(audit.retained, 1);
    }

    #[test]
    fn far_pair_is_dropped() {
        let cs = [
            cluster("a", "X", Epoch::Early, 10.0, 0.0, 0.3),
            cluster("b", "X", Epoch::Late, 11.35, 0.0, 0.2),
        ];
        let (pairs, audit) = run_stage1(&cs, &Stage1Config::default()).unwrap();
        assert!(pairs.is_empty());
        assert_eq!(audit.distance_dropped, 1);
        assert_eq!(audit.countries[0].distance_dropped, 1);
    }

    #[test]
    fn zero_exposure_pair_is_dropped() {
        let cs = [
            cluster("a", "X", Epoch::Early, 10.0, 0.0, 0.0),
            cluster("b", "X", Epoch::Late, 10.01, 0.0, 0.0),
            cluster("c", "X", Epoch::Early, 12.0, 1.0, 0.0),
            cluster("d", "X", Epoch::Late, 12.01, 1.0, 0.1),
        ];
        let (pairs, audit) = run_stage1(&cs, &Stage1Config::default()).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(audit.zero_pfpr_dropped, 1);
        assert_eq!(pairs[0].early.cluster_id, "c");
    }

    #[test]
    fn country_missing_an_epoch_is_skipped() {
        let cs = [
            cluster("a", "X", Epoch::Early, 10.0, 0.0, 0.3),
            cluster("b", "Y", Epoch::Early, 10.0, 0.0, 0.3),
            cluster("c", "Y", Epoch::Late, 10.0, 0.0, 0.3),
        ];
        let (pairs, audit) = run_stage1(&cs, &Stage1Config::default()).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(audit.skipped, vec![("X".to_string(), "no late clusters".to_string())]);
    }

    #[test]
    fn matching_never_crosses_countries() {
        let cs = [
            cluster("a", "X", Epoch::Early, 10.0, 0.0, 0.3),
            cluster("b", "X", Epoch::Late, 10.5, 0.5, 0.3),
            cluster("c", "Y", Epoch::Early, 10.5, 0.5, 0.3),
            cluster("d", "Y", Epoch::Late, 10.0, 0.0, 0.3),
        ];
        let (pairs, _) = run_stage1(&cs, &Stage1Config::default()).unwrap();
        assert!(pairs.iter().all(|p| p.early.country == p.late.country));
    }

    #[test]
    fn diagnostics_degenerate_pairing() {
        let pairs: Vec<ClusterPair> = (0..4)
            .map(|k| {
                let (lon, lat) = (k as f64 * 0.3 + 1.0, (k * k) as f64 * 0.1);
                ClusterPair::new(
                    k,
                    cluster("e", "X", Epoch::Early, lon, lat, 0.2),
                    cluster("l", "X", Epoch::Late, lon, lat, 0.1),
                )
            })
            .collect();
        let d = stage1_diagnostics(&pairs).unwrap();
        assert_eq!(d.longitude_correlation, 1.0);
        assert_eq!(d.latitude_correlation, 1.0);
        assert_eq!(d.mean_distance_km, 0.0);
    }

    #[test]
    fn diagnostics_hand_example() {
        let mut e1 = cluster("e1", "X", Epoch::Early, 1.0, 2.0, 0.4);
        let l1 = cluster("l1", "X", Epoch::Late, 1.0, 2.0, 0.1);
        let e2 = cluster("e2", "X", Epoch::Early, 3.0, 5.0, 0.2);
        let mut l2 = cluster("l2", "X", Epoch::Late, 3.0, 5.0, 0.3);
        e1.location.elevation_m = 50.0;
        l2.location.elevation_m = 130.0;
        let d = stage1_diagnostics(&[ClusterPair::new(0, e1, l1), ClusterPair::new(1, e2, l2)]).unwrap();
        assert!((d.mean_abs_elevation_diff_m - 40.0).abs() < 1e-12);
        assert!((d.mean_z_early - 0.3).abs() < 1e-12);
        assert!((d.mean_z_late - 0.2).abs() < 1e-12);
        assert!(stage1_diagnostics(&[]).is_err());
    }

    #[test]
    fn pairs_round_trip() {
        let cs = [
            cluster("a", "X", Epoch::Early, 10.0, 0.0, 0.3),
            cluster("b", "X", Epoch::Late, 10.045, 0.0, 0.2),
            cluster("a", "Y", Epoch::Early, 10.0, 0.0, 0.37),
            cluster("a", "Y", Epoch::Late, 10.045, 0.0, 0.21),
        ];
        let (pairs, _) = run_stage1(&cs, &Stage1Config::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        write_pairs(&path, &pairs).unwrap();
        assert_eq!(load_pairs(&path, &cs).unwrap(), pairs);
    }
}

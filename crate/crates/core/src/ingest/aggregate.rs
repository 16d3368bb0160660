use std::collections::BTreeMap;

use super::{ClusterMeta, ClusterRecord, IndividualRecord, COVARIATES, N_COVARIATES};
use crate::error::{Error, Result};

/// Sum in ascending order, so the result does not depend on record order.
fn ordered_sum(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    (v.iter().sum(), v.len())
}

/// Builds a [`ClusterRecord`] from the cluster's individuals.
///
/// Covariates are means over the non-missing cells of each field, which is the
/// same as filling missing cells with the within-cluster mean. The mean
/// birthweight uses observed values only and is absent when none are observed.
pub fn aggregate_cluster(records: &[IndividualRecord], meta: &ClusterMeta) -> Result<ClusterRecord> {
    if records.is_empty() {
        return Err(Error::InvalidInput(format!(
            "cluster {} has no individual records",
            meta.cluster_id
        )));
    }
    if let Some(r) = records.iter().find(|r| r.cluster_id != meta.cluster_id) {
        return Err(Error::InvalidInput(format!(
            "record {} belongs to cluster {}, not {}",
            r.record_id, r.cluster_id, meta.cluster_id
        )));
    }

    let mut covariates = [0.0; N_COVARIATES];
    for (c, cov) in COVARIATES.iter().enumerate() {
        let (sum, n) = ordered_sum(records.iter().filter_map(|r| r.covariates[c]));
        if n == 0 {
            return Err(Error::validation(
                cov.name(),
                format!("missing for every record of cluster {}", meta.cluster_id),
            ));
        }
        covariates[c] = sum / n as f64;
    }

    let (bw_sum, bw_n) = ordered_sum(records.iter().filter_map(|r| r.birthweight_g));

    Ok(ClusterRecord {
        cluster_id: meta.cluster_id.clone(),
        country: meta.country.clone(),
        epoch: meta.epoch,
        location: meta.location,
        pfpr: meta.pfpr,
        covariates,
        mean_birthweight_g: (bw_n > 0).then(|| bw_sum / bw_n as f64),
        n_individuals: records.len(),
    })
}

/// Aggregates every cluster in `metas`. Clusters without individual records
/// are skipped and returned by id.
pub fn aggregate_all(
    records: &[IndividualRecord],
    metas: &[ClusterMeta],
) -> Result<(Vec<ClusterRecord>, Vec<String>)> {
    let mut by_cluster: BTreeMap<&str, Vec<IndividualRecord>> = BTreeMap::new();
    for r in records {
        by_cluster.entry(r.cluster_id.as_str()).or_default().push(r.clone());
    }
    let mut clusters = Vec::with_capacity(metas.len());
    let mut skipped = Vec::new();
    for meta in metas {
        match by_cluster.get(meta.cluster_id.as_str()) {
            Some(rs) => clusters.push(aggregate_cluster(rs, meta)?),
            None => {
                log::warn!("cluster {} has no individual records; skipped", meta.cluster_id);
                skipped.push(meta.cluster_id.clone());
            }
        }
    }
    Ok((clusters, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use crate::ingest::{BirthSize, Covariate, Epoch};
    use proptest::prelude::*;

    fn meta() -> ClusterMeta {
        ClusterMeta {
            cluster_id: "c1".into(),
            country: "KE".into(),
            epoch: Epoch::Early,
            location: GeoPoint::new(36.8, -1.3, 1700.0),
            pfpr: 0.25,
        }
    }

    fn rec(id: &str, bw: Option<f64>, fill: f64) -> IndividualRecord {
        IndividualRecord {
            record_id: id.into(),
            cluster_id: "c1".into(),
            birthweight_g: bw,
            reported_birth_size: Some(BirthSize::Average),
            multiple_birth: false,
            covariates: [Some(fill); N_COVARIATES],
        }
    }

    #[test]
    fn means_over_observed_values() {
        let mut a = rec("a", Some(3000.0), 1.0);
        let b = rec("b", None, 1.0);
        let mut c = rec("c", Some(3400.0), 1.0);
        a.covariates[Covariate::WealthIndex.index()] = Some(2.0);
        c.covariates[Covariate::WealthIndex.index()] = Some(4.0);
        let mut b = b;
        b.covariates[Covariate::WealthIndex.index()] = None;
        let cl = aggregate_cluster(&[a, b, c], &meta()).unwrap();
        assert_eq!(cl.covariate(Covariate::WealthIndex), 3.0);
        assert_eq!(cl.mean_birthweight_g, Some(3200.0));
        assert_eq!(cl.n_individuals, 3);
    }

    #[test]
    fn single_record_and_errors() {
        let r = rec("a", None, 2.0);
        let cl = aggregate_cluster(std::slice::from_ref(&r), &meta()).unwrap();
        assert_eq!(cl.covariates, [2.0; N_COVARIATES]);
        assert_eq!(cl.mean_birthweight_g, None);
        assert!(aggregate_cluster(&[], &meta()).is_err());
        let mut other = r;
        other.cluster_id = "zz".into();
        assert!(aggregate_cluster(&[other], &meta()).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariant(vals in prop::collection::vec((0u8..2, 1000.0f64..5000.0, prop::bool::ANY), 1..20), seed in any::<u64>()) {
            let records: Vec<_> = vals.iter().enumerate().map(|(i, (v, bw, obs))| {
                rec(&format!("r{i}"), obs.then_some(*bw), f64::from(*v))
            }).collect();
            let mut shuffled = records.clone();
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = aggregate_cluster(&records, &meta()).unwrap();
            let b = aggregate_cluster(&shuffled, &meta()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

//! Multiple imputation of missing birthweights from a Bayesian linear
//! regression on individual characteristics.

mod diagnostics;
mod gibbs;

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::csvio::{column_index, create, open, parse_f64};
use crate::ingest::{BirthSize, Covariate, IndividualRecord};
use crate::rng::indexed_substream;
use crate::stats::{dependent_columns, mean, quantile, std_dev};

pub use diagnostics::{
    bulk_ess, diagnostics_gate, ess_raw, mcse_mean, mean_ess, rhat, tail_ess, GateReport, McmcDiagnostics,
    RHAT_WARNING,
};
use gibbs::{run_chain, Prior, SufficientStats};

/// Regressors of the imputation model (the intercept is always included).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    MotherAge,
    MotherAgeSquared,
    WealthIndex,
    BirthOrder,
    BirthOrderSquared,
    Urban,
    MotherEducation,
    /// Child sex indicator (1 = boy).
    ChildSex,
    MaritalStatus,
    AntenatalCare,
    LowBirthSize,
    LargeBirthSize,
    /// Prevalence of the individual's cluster.
    ClusterPfpr,
}

/// Individual-level characteristics.
pub const INDIVIDUAL_PREDICTORS: [Predictor; 12] = [
    Predictor::MotherAge,
    Predictor::MotherAgeSquared,
    Predictor::WealthIndex,
    Predictor::BirthOrder,
    Predictor::BirthOrderSquared,
    Predictor::Urban,
    Predictor::MotherEducation,
    Predictor::ChildSex,
    Predictor::MaritalStatus,
    Predictor::AntenatalCare,
    Predictor::LowBirthSize,
    Predictor::LargeBirthSize,
];

impl Predictor {
    pub fn name(self) -> &'static str {
        match self {
            Predictor::MotherAge => "mother_age_years",
            Predictor::MotherAgeSquared => "mother_age_years_sq",
            Predictor::WealthIndex => "wealth_index",
            Predictor::BirthOrder => "birth_order",
            Predictor::BirthOrderSquared => "birth_order_sq",
            Predictor::Urban => "urban",
            Predictor::MotherEducation => "mother_education",
            Predictor::ChildSex => "child_sex",
            Predictor::MaritalStatus => "marital_status",
            Predictor::AntenatalCare => "antenatal_care",
            Predictor::LowBirthSize => "low_birth_size",
            Predictor::LargeBirthSize => "large_birth_size",
            Predictor::ClusterPfpr => "cluster_pfpr",
        }
    }

    fn covariate(self) -> Option<Covariate> {
        match self {
            Predictor::MotherAge | Predictor::MotherAgeSquared => Some(Covariate::MotherAge),
            Predictor::WealthIndex => Some(Covariate::WealthIndex),
            Predictor::BirthOrder | Predictor::BirthOrderSquared => Some(Covariate::BirthOrder),
            Predictor::Urban => Some(Covariate::Urban),
            Predictor::MotherEducation => Some(Covariate::MotherEducation),
            Predictor::ChildSex => Some(Covariate::ChildSex),
            Predictor::MaritalStatus => Some(Covariate::MaritalStatus),
            Predictor::AntenatalCare => Some(Covariate::AntenatalCare),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputationModelSpec {
    pub predictors: Vec<Predictor>,
    /// Prior location of the intercept; slopes are centred at zero.
    pub prior_location: f64,
    pub prior_scale: f64,
    pub prior_df: f64,
    pub chains: usize,
    pub iterations_per_chain: usize,
    pub warmup_fraction: f64,
    pub m_imputations: usize,
    pub seed: u64,
}

/// The individual-level set plus the cluster's own prevalence. Leaving the
/// exposure out of the imputation model pulls imputed outcomes toward no
/// exposure effect.
pub fn default_predictors() -> Vec<Predictor> {
    let mut p = INDIVIDUAL_PREDICTORS.to_vec();
    p.push(Predictor::ClusterPfpr);
    p
}

impl Default for ImputationModelSpec {
    fn default() -> Self {
        ImputationModelSpec {
            predictors: default_predictors(),
            prior_location: 3200.0,
            prior_scale: 593.0,
            prior_df: 3.0,
            chains: 2,
            iterations_per_chain: 1000,
            warmup_fraction: 0.5,
            m_imputations: 20,
            seed: 0,
        }
    }
}

impl ImputationModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m_imputations < 2 {
            return Err(Error::validation("m_imputations", "must be at least 2"));
        }
        if self.chains < 2 {
            return Err(Error::validation("chains", "must be at least 2"));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::validation("warmup_fraction", "must lie in (0, 1)"));
        }
        if !(self.prior_scale > 0.0) || !(self.prior_df > 0.0) {
            return Err(Error::validation("prior_scale", "scale and df must be positive"));
        }
        if self.m_imputations > self.retained_per_chain() * self.chains {
            return Err(Error::validation("m_imputations", "exceeds the number of retained draws"));
        }
        let mut seen = self.predictors.clone();
        seen.sort_by_key(|p| *p as u8);
        seen.dedup();
        if seen.len() != self.predictors.len() {
            return Err(Error::Collinear(vec!["duplicated predictor".into()]));
        }
        Ok(())
    }

    pub fn warmup(&self) -> usize {
        (self.iterations_per_chain as f64 * self.warmup_fraction).floor() as usize
    }

    pub fn retained_per_chain(&self) -> usize {
        self.iterations_per_chain - self.warmup()
    }

    /// Parameter names: intercept, the predictors, then sigma.
    pub fn parameter_names(&self) -> Vec<String> {
        std::iter::once("intercept".to_string())
            .chain(self.predictors.iter().map(|p| p.name().to_string()))
            .chain(std::iter::once("sigma".to_string()))
            .collect()
    }
}

/// Design rows for the imputation model. Missing covariate cells are filled
/// with the mean of the individual's cluster among the given records, or the
/// overall mean if the whole cluster is missing it.
struct Design {
    predictors: Vec<Predictor>,
    cluster_means: HashMap<(String, Covariate), f64>,
    overall_means: HashMap<Covariate, f64>,
}

impl Design {
    fn new(records: &[IndividualRecord], predictors: &[Predictor]) -> Self {
        let mut cluster_acc: HashMap<(String, Covariate), (f64, usize)> = HashMap::new();
        let mut overall_acc: HashMap<Covariate, (f64, usize)> = HashMap::new();
        let covs: Vec<Covariate> = predictors.iter().filter_map(|p| p.covariate()).collect();
        for r in records {
            for &c in &covs {
                if let Some(v) = r.covariate(c) {
                    let e = cluster_acc.entry((r.cluster_id.clone(), c)).or_default();
                    e.0 += v;
                    e.1 += 1;
                    let e = overall_acc.entry(c).or_default();
                    e.0 += v;
                    e.1 += 1;
                }
            }
        }
        let avg = |(s, n): (f64, usize)| s / n as f64;
        Design {
            predictors: predictors.to_vec(),
            cluster_means: cluster_acc.into_iter().map(|(k, v)| (k, avg(v))).collect(),
            overall_means: overall_acc.into_iter().map(|(k, v)| (k, avg(v))).collect(),
        }
    }

    fn row(&self, r: &IndividualRecord, cluster_pfpr: Option<&HashMap<String, f64>>) -> Result<Vec<f64>> {
        let mut row = Vec::with_capacity(self.predictors.len() + 1);
        row.push(1.0);
        for &p in &self.predictors {
            let value = match p {
                Predictor::LowBirthSize | Predictor::LargeBirthSize => {
                    let size = r.reported_birth_size.ok_or_else(|| {
                        Error::InvalidInput(format!("record {} has no reported birth size", r.record_id))
                    })?;
                    let target = if p == Predictor::LowBirthSize { BirthSize::Small } else { BirthSize::Large };
                    f64::from(u8::from(size == target))
                }
                Predictor::ClusterPfpr => *cluster_pfpr
                    .and_then(|m| m.get(&r.cluster_id))
                    .ok_or_else(|| Error::InvalidInput(format!("no exposure for cluster {}", r.cluster_id)))?,
                _ => {
                    let c = p.covariate().expect("covariate-backed predictor");
                    let v = match r.covariate(c) {
                        Some(v) => v,
                        None => *self
                            .cluster_means
                            .get(&(r.cluster_id.clone(), c))
                            .or_else(|| self.overall_means.get(&c))
                            .ok_or_else(|| Error::InvalidInput(format!("{} is missing everywhere", c.name())))?,
                    };
                    match p {
                        Predictor::MotherAgeSquared | Predictor::BirthOrderSquared => v * v,
                        _ => v,
                    }
                }
            };
            row.push(value);
        }
        Ok(row)
    }
}

/// Retained posterior draws, `chains[chain][iteration][parameter]`, with the
/// parameters ordered as [`ImputationModelSpec::parameter_names`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub predictors: Vec<Predictor>,
    pub parameters: Vec<String>,
    pub warmup: usize,
    pub chains: Vec<Vec<Vec<f64>>>,
}

impl Posterior {
    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    /// Draws of parameter `k`, one vector per chain.
    pub fn parameter_chains(&self, k: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.iter().map(|row| row[k]).collect()).collect()
    }

    pub fn parameter_mean(&self, k: usize) -> f64 {
        mean(&self.parameter_chains(k).concat())
    }

    /// Table of posterior mean, SD, central 95% interval and diagnostics.
    pub fn summary(&self, diag: &McmcDiagnostics) -> Vec<ParameterSummary> {
        (0..self.parameters.len())
            .map(|k| {
                let pooled = self.parameter_chains(k).concat();
                ParameterSummary {
                    parameter: self.parameters[k].clone(),
                    estimate: mean(&pooled),
                    se: std_dev(&pooled),
                    ci_lower: quantile(&pooled, 0.025),
                    ci_upper: quantile(&pooled, 0.975),
                    rhat: diag.rhat[k],
                    bulk_ess: diag.bulk_ess[k],
                    tail_ess: diag.tail_ess[k],
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub parameter: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub rhat: f64,
    pub bulk_ess: f64,
    pub tail_ess: f64,
}

pub fn write_posterior_summary(path: &Path, rows: &[ParameterSummary]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["parameter", "estimate", "se", "ci_lower", "ci_upper", "rhat", "bulk_ess", "tail_ess"])?;
    for r in rows {
        w.write_record([
            r.parameter.clone(),
            r.estimate.to_string(),
            r.se.to_string(),
            r.ci_lower.to_string(),
            r.ci_upper.to_string(),
            r.rhat.to_string(),
            r.bulk_ess.to_string(),
            r.tail_ess.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Fits the imputation model to the records that have a birthweight.
///
/// `cluster_pfpr` is only consulted when [`Predictor::ClusterPfpr`] is among
/// the predictors. Chains run in parallel, each on its own random stream.
pub fn fit_imputation_model(
    records: &[IndividualRecord],
    cluster_pfpr: Option<&HashMap<String, f64>>,
    spec: &ImputationModelSpec,
) -> Result<(Posterior, McmcDiagnostics)> {
    spec.validate()?;
    let complete: Vec<&IndividualRecord> = records.iter().filter(|r| r.birthweight_g.is_some()).collect();
    let n_params = spec.predictors.len() + 2;
    if complete.len() < 10 * n_params {
        return Err(Error::InvalidInput(format!(
            "{} complete cases for {n_params} parameters; need at least {}",
            complete.len(),
            10 * n_params
        )));
    }
    let owned: Vec<IndividualRecord> = complete.iter().map(|r| (*r).clone()).collect();
    let design = Design::new(&owned, &spec.predictors);
    let rows = owned
        .iter()
        .map(|r| design.row(r, cluster_pfpr))
        .collect::<Result<Vec<_>>>()?;
    let y: Vec<f64> = owned.iter().map(|r| r.birthweight_g.unwrap()).collect();
    let stats = SufficientStats::from_rows(&rows, &y);

    let names = spec.parameter_names();
    let dependent = dependent_columns(&stats.xtx);
    if !dependent.is_empty() {
        return Err(Error::Collinear(dependent.iter().map(|&k| names[k].clone()).collect()));
    }

    let mut location = DVector::zeros(spec.predictors.len() + 1);
    location[0] = spec.prior_location;
    let prior = Prior {
        location,
        scale: spec.prior_scale,
        df: spec.prior_df,
        sigma_scale: spec.prior_scale,
    };
    let warmup = spec.warmup();
    let chains = (0..spec.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = indexed_substream(spec.seed, "impute/chain", c as u64);
            let draws = run_chain(&stats, &prior, spec.iterations_per_chain, &mut rng)?;
            Ok(draws[warmup..].to_vec())
        })
        .collect::<Result<Vec<_>>>()?;

    let posterior = Posterior {
        predictors: spec.predictors.clone(),
        parameters: names.clone(),
        warmup,
        chains,
    };
    let per_param: Vec<Vec<Vec<f64>>> = (0..names.len()).map(|k| posterior.parameter_chains(k)).collect();
    let diag = McmcDiagnostics::compute(names, &per_param);
    for w in &diag.warnings {
        log::warn!("imputation model did not converge: {w}");
    }
    Ok((posterior, diag))
}

/// Which retained posterior draw an imputation used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawRef {
    pub chain: usize,
    /// Iteration within the chain, counting warm-up.
    pub iteration: usize,
}

/// One completed dataset: the birthweights of every input record, in input
/// order, with missing values filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedDataset {
    pub imputation_index: usize,
    pub birthweights: Vec<f64>,
    pub imputed: Vec<bool>,
    pub provenance: DrawRef,
}

impl ImputedDataset {
    /// The input records with their birthweights completed.
    pub fn records(&self, base: &[IndividualRecord]) -> Vec<IndividualRecord> {
        base.iter()
            .zip(&self.birthweights)
            .map(|(r, &bw)| IndividualRecord { birthweight_g: Some(bw), ..r.clone() })
            .collect()
    }

    /// Mean completed birthweight of each cluster.
    pub fn cluster_means(&self, base: &[IndividualRecord]) -> HashMap<String, f64> {
        let mut acc: HashMap<&str, Vec<f64>> = HashMap::new();
        for (r, &bw) in base.iter().zip(&self.birthweights) {
            acc.entry(r.cluster_id.as_str()).or_default().push(bw);
        }
        acc.into_iter()
            .map(|(k, mut v)| {
                v.sort_by(f64::total_cmp);
                (k.to_string(), v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect()
    }
}

/// Draws `m_imputations` completed datasets, each from one retained posterior
/// draw taken at evenly spaced positions across the concatenated chains.
pub fn draw_imputations(
    records: &[IndividualRecord],
    cluster_pfpr: Option<&HashMap<String, f64>>,
    posterior: &Posterior,
    spec: &ImputationModelSpec,
) -> Result<Vec<ImputedDataset>> {
    if posterior.predictors != spec.predictors {
        return Err(Error::InvalidInput(
            "imputation predictors differ from those the model was fitted with".into(),
        ));
    }
    let m = spec.m_imputations;
    let total = posterior.n_draws();
    if m == 0 || m > total {
        return Err(Error::InvalidInput(format!("cannot take {m} imputations from {total} draws")));
    }
    let design = Design::new(records, &spec.predictors);
    let missing: Vec<(usize, Vec<f64>)> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.birthweight_g.is_none())
        .map(|(i, r)| design.row(r, cluster_pfpr).map(|row| (i, row)))
        .collect::<Result<_>>()?;
    let per_chain = posterior.chains[0].len();

    Ok((0..m)
        .into_par_iter()
        .map(|k| {
            let flat = ((2 * k + 1) * total) / (2 * m);
            let (chain, it) = (flat / per_chain, flat % per_chain);
            let draw = &posterior.chains[chain][it];
            let (beta, sigma) = draw.split_at(draw.len() - 1);
            let mut rng = indexed_substream(spec.seed, "impute/draw", k as u64);
            let mut birthweights: Vec<f64> = records.iter().map(|r| r.birthweight_g.unwrap_or(f64::NAN)).collect();
            for (i, row) in &missing {
                let mu: f64 = row.iter().zip(beta).map(|(x, b)| x * b).sum();
                birthweights[*i] = mu + sigma[0] * rng.sample::<f64, _>(StandardNormal);
            }
            ImputedDataset {
                imputation_index: k + 1,
                birthweights,
                imputed: records.iter().map(|r| r.birthweight_g.is_none()).collect(),
                provenance: DrawRef { chain, iteration: posterior.warmup + it },
            }
        })
        .collect())
}

const DATASET_COLUMNS: [&str; 5] = ["imputation_index", "record_id", "cluster_id", "birthweight_g", "imputed"];

pub fn write_imputed_dataset(path: &Path, ds: &ImputedDataset, base: &[IndividualRecord]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(DATASET_COLUMNS)?;
    for (i, r) in base.iter().enumerate() {
        w.write_record([
            ds.imputation_index.to_string(),
            r.record_id.clone(),
            r.cluster_id.clone(),
            ds.birthweights[i].to_string(),
            u8::from(ds.imputed[i]).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a completed dataset written by [`write_imputed_dataset`]; rows must
/// follow the order of `base`.
pub fn load_imputed_dataset(path: &Path, base: &[IndividualRecord], provenance: DrawRef) -> Result<ImputedDataset> {
    let mut reader = open(path)?;
    let headers = reader.headers()?.clone();
    let idx = DATASET_COLUMNS
        .iter()
        .map(|n| column_index(&headers, n))
        .collect::<Result<Vec<_>>>()?;
    let mut birthweights = Vec::with_capacity(base.len());
    let mut imputed = Vec::with_capacity(base.len());
    let mut index = 0;
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let err = |field: &str, message: String| Error::Row { row: i + 2, field: field.to_string(), message };
        let get = |k: usize| row.get(idx[k]).unwrap_or("");
        if base.get(i).map(|r| r.record_id.as_str()) != Some(get(1)) {
            return Err(err("record_id", format!("`{}` does not match the filtered records", get(1))));
        }
        index = get(0).parse().map_err(|e: std::num::ParseIntError| err("imputation_index", e.to_string()))?;
        birthweights.push(parse_f64(get(3)).map_err(|m| err("birthweight_g", m))?);
        imputed.push(get(4) == "1");
    }
    if birthweights.len() != base.len() {
        return Err(Error::InvalidInput(format!(
            "{} holds {} rows for {} records",
            path.display(),
            birthweights.len(),
            base.len()
        )));
    }
    Ok(ImputedDataset { imputation_index: index, birthweights, imputed, provenance })
}

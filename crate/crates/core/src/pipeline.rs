//! Orchestration of the full study: synthetic or file inputs, record filters,
//! both matching stages, imputation, pooled analysis and sensitivity.
//!
//! Every stage reads its inputs from and writes its artifacts to one output
//! directory, so any stage can be rerun from cached upstream artifacts. A
//! stage that fails leaves a `<stage>.partial` marker behind. After each
//! stage the manifest is rewritten with the SHA-256 of every artifact.

use std::collections::HashMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analyze::{
    dose_effect, fit_imputed, format_pooled_table, rubin_pool, rubin_pool_all, write_pooled_table, DoseEffect,
    PooledEstimate, RegressionFit,
};
use crate::error::{Error, Result};
use crate::impute::{
    diagnostics_gate, draw_imputations, fit_imputation_model, load_imputed_dataset, write_imputed_dataset,
    write_posterior_summary, DrawRef, GateReport, ImputationModelSpec, ImputedDataset, McmcDiagnostics, Posterior,
    Predictor,
};
use crate::ingest::{
    aggregate_all, filter_records, generate_synthetic, load_cluster_meta, load_cluster_records, load_individuals,
    write_cluster_meta, write_cluster_records, write_individuals, ClusterMeta, ClusterRecord, ColumnMapping,
    FilterAudit, IndividualRecord, SyntheticConfig,
};
use crate::match_bipartite::{load_pairs, run_stage1, stage1_diagnostics, write_pairs, Stage1Audit, Stage1Config};
use crate::match_nonbipartite::{
    balance_table, load_quads, prematch_balance, run_stage2, write_quads, BalanceTable, Stage2Audit, Stage2Config,
};
use crate::rng::derive_seed;
use crate::sensitivity::{format_sensitivity, run_sensitivity, write_sensitivity_csv, SensitivityOptions, SensitivityReport};
use crate::{ClusterPair, QuadMatch};

pub const MANIFEST: &str = "manifest.json";

pub const INDIVIDUALS: &str = "individuals.csv";
pub const CLUSTER_META: &str = "clusters.csv";
pub const TRUTH: &str = "truth.json";
pub const FILTERED: &str = "filtered_individuals.csv";
pub const CLUSTER_RECORDS: &str = "cluster_records.csv";
pub const INGEST_AUDIT: &str = "ingest_audit.json";
pub const PAIRS: &str = "pairs.csv";
pub const STAGE1_AUDIT: &str = "stage1_audit.json";
pub const STAGE1_DIAGNOSTICS: &str = "stage1_diagnostics.json";
pub const QUADS: &str = "quads.csv";
pub const STAGE2_AUDIT: &str = "stage2_audit.json";
pub const BALANCE: &str = "balance.csv";
pub const BALANCE_PREMATCH: &str = "balance_prematch.csv";
pub const POSTERIOR_SUMMARY: &str = "posterior_summary.csv";
pub const MCMC_DIAGNOSTICS: &str = "mcmc_diagnostics.json";
pub const IMPUTATIONS: &str = "imputations.json";
pub const IMPUTED_DIR: &str = "imputed";
pub const FITS: &str = "fits.json";
pub const POOLED_CSV: &str = "pooled.csv";
pub const POOLED_TXT: &str = "pooled.txt";
pub const DOSE_EFFECTS: &str = "dose_effects.json";
pub const SENSITIVITY_CSV: &str = "sensitivity.csv";
pub const SENSITIVITY_TXT: &str = "sensitivity.txt";
pub const SENSITIVITY_JSON: &str = "sensitivity.json";

const OUTPUTS: [&str; 26] = [
    MANIFEST,
    INDIVIDUALS,
    CLUSTER_META,
    TRUTH,
    FILTERED,
    CLUSTER_RECORDS,
    INGEST_AUDIT,
    PAIRS,
    STAGE1_AUDIT,
    STAGE1_DIAGNOSTICS,
    QUADS,
    STAGE2_AUDIT,
    BALANCE,
    BALANCE_PREMATCH,
    POSTERIOR_SUMMARY,
    MCMC_DIAGNOSTICS,
    IMPUTATIONS,
    IMPUTED_DIR,
    FITS,
    POOLED_CSV,
    POOLED_TXT,
    DOSE_EFFECTS,
    SENSITIVITY_CSV,
    SENSITIVITY_TXT,
    SENSITIVITY_JSON,
    "config.json",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityConfig {
    /// Design columns whose partial R² is reported for comparison.
    pub benchmarks: Vec<String>,
    #[serde(flatten)]
    pub options: SensitivityOptions,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            benchmarks: ["mother_education_late", "child_sex_late", "marital_status_late"]
                .map(String::from)
                .to_vec(),
            options: SensitivityOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    /// Generate the inputs; otherwise `individuals_path` and `clusters_path`
    /// are read.
    pub synthetic: Option<SyntheticConfig>,
    pub individuals_path: Option<PathBuf>,
    pub clusters_path: Option<PathBuf>,
    pub columns: ColumnMapping,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub imputation: ImputationModelSpec,
    pub sensitivity: SensitivityConfig,
    /// Prevalence reductions reported as dose effects.
    pub doses: Vec<f64>,
    pub rhat_max: f64,
    pub ess_min: f64,
    /// Master seed; the generator and sampler seeds are derived from it.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            out_dir: PathBuf::from("out"),
            synthetic: Some(SyntheticConfig::default()),
            individuals_path: None,
            clusters_path: None,
            columns: ColumnMapping::default(),
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            imputation: ImputationModelSpec::default(),
            sensitivity: SensitivityConfig::default(),
            doses: vec![0.635, 0.65],
            rhat_max: 1.01,
            ess_min: 400.0,
            seed: 42,
        }
    }
}

fn lexical(path: &Path) -> PathBuf {
    let abs = if path.is_absolute() {
        path.to_path_buf()
    } else {
        std::env::current_dir().unwrap_or_default().join(path)
    };
    let mut out = PathBuf::new();
    for c in abs.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

fn check(ok: bool, field: &str, message: &str) -> Result<()> {
    if ok { Ok(()) } else { Err(Error::validation(field, message)) }
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The configuration with the generator and sampler seeds derived from
    /// the master seed.
    pub fn effective(&self) -> Self {
        let mut cfg = self.clone();
        if let Some(s) = cfg.synthetic.as_mut() {
            s.seed = derive_seed(self.seed, "synth");
        }
        cfg.imputation.seed = derive_seed(self.seed, "impute");
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let s1 = &self.stage1;
        check(s1.caliper_multiplier.is_finite() && s1.caliper_multiplier > 0.0, "stage1.caliper_multiplier", "must be positive")?;
        check(s1.rho.is_finite() && s1.rho >= 0.0, "stage1.rho", "must be non-negative")?;
        check(s1.max_km > 0.0, "stage1.max_km", "must be positive")?;
        let s2 = &self.stage2;
        check(s2.rho_prime.is_finite() && s2.rho_prime > 0.0, "stage2.rho_prime", "must be positive")?;
        check(s2.xi.is_finite() && s2.xi >= 0.0, "stage2.xi", "must be non-negative")?;
        self.imputation.validate()?;
        let alpha = self.sensitivity.options.alpha;
        check(alpha > 0.0 && alpha < 1.0, "sensitivity.alpha", "must lie in (0, 1)")?;
        check(self.doses.iter().all(|d| d.is_finite()), "doses", "must be finite")?;
        check(self.rhat_max >= 1.0, "rhat_max", "must be at least 1")?;
        check(self.ess_min >= 0.0, "ess_min", "must be non-negative")?;
        match (&self.synthetic, &self.individuals_path, &self.clusters_path) {
            (Some(s), None, None) => s.validate()?,
            (None, Some(_), Some(_)) => {}
            _ => {
                return Err(Error::validation(
                    "synthetic",
                    "set either `synthetic` or both `individuals_path` and `clusters_path`",
                ))
            }
        }
        let out = lexical(&self.out_dir);
        let mut seen: Vec<PathBuf> = OUTPUTS.iter().map(|f| out.join(f)).collect();
        for (field, p) in [("individuals_path", &self.individuals_path), ("clusters_path", &self.clusters_path)] {
            if let Some(p) = p {
                let p = lexical(p);
                if seen.iter().any(|q| *q == p || p.starts_with(out.join(IMPUTED_DIR))) {
                    return Err(Error::validation(field, format!("{} collides with another path", p.display())));
                }
                seen.push(p);
            }
        }
        Ok(())
    }

    fn individuals_input(&self) -> PathBuf {
        match &self.individuals_path {
            Some(p) if self.synthetic.is_none() => p.clone(),
            _ => self.out_dir.join(INDIVIDUALS),
        }
    }

    fn clusters_input(&self) -> PathBuf {
        match &self.clusters_path {
            Some(p) if self.synthetic.is_none() => p.clone(),
            _ => self.out_dir.join(CLUSTER_META),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Ingest,
    Stage1,
    Stage2,
    Impute,
    Analyze,
    Sensitivity,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Stage1,
        Stage::Stage2,
        Stage::Impute,
        Stage::Analyze,
        Stage::Sensitivity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
            Stage::Impute => "impute",
            Stage::Analyze => "analyze",
            Stage::Sensitivity => "sensitivity",
        }
    }
}

/// Filtered records and the clusters aggregated from them.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub filtered: Vec<IndividualRecord>,
    pub filter_audit: FilterAudit,
    pub clusters: Vec<ClusterRecord>,
    /// Clusters left without records after filtering.
    pub skipped_clusters: Vec<String>,
}

pub fn prepare(individuals: Vec<IndividualRecord>, metas: &[ClusterMeta]) -> Result<Prepared> {
    for m in metas {
        m.validate()?;
    }
    let (filtered, filter_audit) = filter_records(individuals);
    let (clusters, skipped_clusters) = aggregate_all(&filtered, metas)?;
    Ok(Prepared { filtered, filter_audit, clusters, skipped_clusters })
}

pub fn cluster_pfpr(clusters: &[ClusterRecord]) -> HashMap<String, f64> {
    clusters.iter().map(|c| (c.cluster_id.clone(), c.pfpr)).collect()
}

fn pfpr_if_needed<'a>(spec: &ImputationModelSpec, map: &'a HashMap<String, f64>) -> Option<&'a HashMap<String, f64>> {
    spec.predictors.contains(&Predictor::ClusterPfpr).then_some(map)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub fits: Vec<RegressionFit>,
    pub pooled: PooledEstimate,
    pub pooled_all: Vec<(String, PooledEstimate)>,
    pub dose_effects: Vec<DoseEffect>,
}

pub fn analyze_datasets(
    quads: &[QuadMatch],
    base: &[IndividualRecord],
    datasets: &[ImputedDataset],
    doses: &[f64],
) -> Result<Analysis> {
    let fits = fit_imputed(quads, base, datasets)?;
    let pooled = rubin_pool(&fits)?;
    let pooled_all = rubin_pool_all(&fits)?;
    let dose_effects = doses.iter().map(|&d| dose_effect(&pooled, d)).collect();
    Ok(Analysis { fits, pooled, pooled_all, dose_effects })
}

/// Everything the study produces, kept in memory.
#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub pairs: Vec<ClusterPair>,
    pub stage1_audit: Stage1Audit,
    pub quads: Vec<QuadMatch>,
    pub stage2_audit: Stage2Audit,
    pub balance: BalanceTable,
    pub posterior: Posterior,
    pub diagnostics: McmcDiagnostics,
    pub datasets: Vec<ImputedDataset>,
    pub analysis: Analysis,
    pub sensitivity: SensitivityReport,
}

/// Runs matching, imputation, analysis and sensitivity without touching the
/// file system. Seeds are taken from `cfg` as given.
pub fn run_study(prepared: &Prepared, cfg: &PipelineConfig) -> Result<StudyOutcome> {
    let (pairs, stage1_audit) = run_stage1(&prepared.clusters, &cfg.stage1).map_err(|e| e.in_stage("stage1"))?;
    let (quads, stage2_audit) = run_stage2(&pairs, &cfg.stage2).map_err(|e| e.in_stage("stage2"))?;
    let balance = balance_table(&quads, &pairs).map_err(|e| e.in_stage("stage2"))?;
    let pfpr = cluster_pfpr(&prepared.clusters);
    let pfpr = pfpr_if_needed(&cfg.imputation, &pfpr);
    let (posterior, diagnostics) =
        fit_imputation_model(&prepared.filtered, pfpr, &cfg.imputation).map_err(|e| e.in_stage("impute"))?;
    let datasets = draw_imputations(&prepared.filtered, pfpr, &posterior, &cfg.imputation)
        .map_err(|e| e.in_stage("impute"))?;
    let analysis =
        analyze_datasets(&quads, &prepared.filtered, &datasets, &cfg.doses).map_err(|e| e.in_stage("analyze"))?;
    let sensitivity = run_sensitivity(&analysis.fits, &cfg.sensitivity.benchmarks, &cfg.sensitivity.options)
        .map_err(|e| e.in_stage("sensitivity"))?;
    Ok(StudyOutcome {
        pairs,
        stage1_audit,
        quads,
        stage2_audit,
        balance,
        posterior,
        diagnostics,
        datasets,
        analysis,
        sensitivity,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LoadSummary {
    records: usize,
    rejects: usize,
    missing_birthweight: usize,
    missing_birth_size: usize,
    missing_birthweight_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IngestAudit {
    load: LoadSummary,
    filter: FilterAudit,
    skipped_clusters: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ImputationIndex {
    gate: GateReport,
    datasets: Vec<ImputationEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ImputationEntry {
    imputation_index: usize,
    file: String,
    provenance: DrawRef,
}

fn load_filtered(out: &Path) -> Result<Vec<IndividualRecord>> {
    load_individuals(&out.join(FILTERED), &ColumnMapping::default())?.into_records_strict()
}

fn load_matched(out: &Path) -> Result<(Vec<ClusterRecord>, Vec<ClusterPair>, Vec<QuadMatch>)> {
    let clusters = load_cluster_records(&out.join(CLUSTER_RECORDS))?;
    let pairs = load_pairs(&out.join(PAIRS), &clusters)?;
    let quads = load_quads(&out.join(QUADS), &pairs)?;
    Ok((clusters, pairs, quads))
}

fn stage_synth(cfg: &PipelineConfig) -> Result<()> {
    let synth = cfg
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::validation("synthetic", "no synthetic configuration given"))?;
    let data = generate_synthetic(synth)?;
    let out = &cfg.out_dir;
    write_individuals(&out.join(INDIVIDUALS), &data.individuals)?;
    write_cluster_meta(&out.join(CLUSTER_META), &data.clusters)?;
    write_json(&out.join(TRUTH), &data.truth)
}

fn stage_ingest(cfg: &PipelineConfig) -> Result<()> {
    let report = load_individuals(&cfg.individuals_input(), &cfg.columns)?;
    let load = LoadSummary {
        records: report.records.len(),
        rejects: report.rejects.len(),
        missing_birthweight: report.missing_birthweight,
        missing_birth_size: report.missing_birth_size,
        missing_birthweight_rate: report.missing_birthweight_rate(),
    };
    log::info!(
        "loaded {} records, {:.2}% missing birthweight",
        load.records,
        100.0 * load.missing_birthweight_rate
    );
    let records = report.into_records_strict()?;
    let metas = load_cluster_meta(&cfg.clusters_input(), &cfg.columns)?;
    let prepared = prepare(records, &metas)?;
    let out = &cfg.out_dir;
    write_individuals(&out.join(FILTERED), &prepared.filtered)?;
    write_cluster_records(&out.join(CLUSTER_RECORDS), &prepared.clusters)?;
    write_json(
        &out.join(INGEST_AUDIT),
        &IngestAudit { load, filter: prepared.filter_audit, skipped_clusters: prepared.skipped_clusters },
    )
}

fn stage_stage1(cfg: &PipelineConfig) -> Result<()> {
    let out = &cfg.out_dir;
    let clusters = load_cluster_records(&out.join(CLUSTER_RECORDS))?;
    let (pairs, audit) = run_stage1(&clusters, &cfg.stage1)?;
    write_pairs(&out.join(PAIRS), &pairs)?;
    write_json(&out.join(STAGE1_AUDIT), &audit)?;
    write_json(&out.join(STAGE1_DIAGNOSTICS), &stage1_diagnostics(&pairs)?)
}

fn stage_stage2(cfg: &PipelineConfig) -> Result<()> {
    let out = &cfg.out_dir;
    let clusters = load_cluster_records(&out.join(CLUSTER_RECORDS))?;
    let pairs = load_pairs(&out.join(PAIRS), &clusters)?;
    let (quads, audit) = run_stage2(&pairs, &cfg.stage2)?;
    write_quads(&out.join(QUADS), &quads)?;
    write_json(&out.join(STAGE2_AUDIT), &audit)?;
    balance_table(&quads, &pairs)?.write_csv(&out.join(BALANCE))?;
    prematch_balance(&pairs)?.write_csv(&out.join(BALANCE_PREMATCH))
}

fn stage_impute(cfg: &PipelineConfig) -> Result<()> {
    let out = &cfg.out_dir;
    let base = load_filtered(out)?;
    let clusters = load_cluster_records(&out.join(CLUSTER_RECORDS))?;
    let pfpr = cluster_pfpr(&clusters);
    let pfpr = pfpr_if_needed(&cfg.imputation, &pfpr);
    let (posterior, diag) = fit_imputation_model(&base, pfpr, &cfg.imputation)?;
    for w in &diag.warnings {
        log::warn!("{w}");
    }
    write_posterior_summary(&out.join(POSTERIOR_SUMMARY), &posterior.summary(&diag))?;
    write_json(&out.join(MCMC_DIAGNOSTICS), &diag)?;
    let datasets = draw_imputations(&base, pfpr, &posterior, &cfg.imputation)?;
    let dir = out.join(IMPUTED_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut entries = Vec::with_capacity(datasets.len());
    for ds in &datasets {
        let file = format!("{IMPUTED_DIR}/imputed_{:02}.csv", ds.imputation_index);
        write_imputed_dataset(&out.join(&file), ds, &base)?;
        entries.push(ImputationEntry { imputation_index: ds.imputation_index, file, provenance: ds.provenance });
    }
    let gate = diagnostics_gate(&diag, cfg.rhat_max, cfg.ess_min);
    if !gate.passed {
        log::warn!("MCMC diagnostics gate failed for {}", gate.offenders.join(", "));
    }
    write_json(&out.join(IMPUTATIONS), &ImputationIndex { gate, datasets: entries })
}

fn stage_analyze(cfg: &PipelineConfig) -> Result<()> {
    let out = &cfg.out_dir;
    let base = load_filtered(out)?;
    let (_, _, quads) = load_matched(out)?;
    let index: ImputationIndex = read_json(&out.join(IMPUTATIONS))?;
    let datasets = index
        .datasets
        .iter()
        .map(|e| load_imputed_dataset(&out.join(&e.file), &base, e.provenance))
        .collect::<Result<Vec<_>>>()?;
    let analysis = analyze_datasets(&quads, &base, &datasets, &cfg.doses)?;
    write_json(&out.join(FITS), &analysis.fits)?;
    write_pooled_table(&out.join(POOLED_CSV), &analysis.pooled_all)?;
    let mut text = format_pooled_table(&analysis.pooled_all);
    for d in &analysis.dose_effects {
        text.push_str(&format!(
            "reduction {:.3}: {:+.3} g (95% CI {:.3}, {:.3})\n",
            d.dose, d.effect, d.ci95.0, d.ci95.1
        ));
    }
    write_text(&out.join(POOLED_TXT), &text)?;
    write_json(&out.join(DOSE_EFFECTS), &analysis.dose_effects)
}

fn stage_sensitivity(cfg: &PipelineConfig) -> Result<()> {
    let out = &cfg.out_dir;
    let fits: Vec<RegressionFit> = read_json(&out.join(FITS))?;
    let report = run_sensitivity(&fits, &cfg.sensitivity.benchmarks, &cfg.sensitivity.options)?;
    write_sensitivity_csv(&out.join(SENSITIVITY_CSV), &report)?;
    write_text(&out.join(SENSITIVITY_TXT), &format_sensitivity(&report))?;
    write_json(&out.join(SENSITIVITY_JSON), &report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: PipelineConfig,
    /// External input files, by the path given in the configuration.
    pub inputs: Vec<ManifestEntry>,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn hash_of(&self, path: &str) -> Option<&str> {
        self.files.iter().find(|e| e.path == path).map(|e| e.sha256.as_str())
    }
}

fn hash_file(path: &Path, label: String) -> Result<ManifestEntry> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(ManifestEntry { path: label, sha256: hex::encode(Sha256::digest(&bytes)), bytes: bytes.len() as u64 })
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<ManifestEntry>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
            continue;
        }
        let rel = path.strip_prefix(root).expect("inside root");
        let label = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if label == MANIFEST || label.ends_with(".partial") {
            continue;
        }
        out.push(hash_file(&path, label)?);
    }
    Ok(())
}

/// Hashes the current contents of the output directory and writes the manifest.
pub fn write_manifest(cfg: &PipelineConfig) -> Result<Manifest> {
    let mut files = Vec::new();
    collect_files(&cfg.out_dir, &cfg.out_dir, &mut files)?;
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let inputs = if cfg.synthetic.is_some() {
        Vec::new()
    } else {
        [&cfg.individuals_path, &cfg.clusters_path]
            .into_iter()
            .flatten()
            .map(|p| hash_file(p, p.display().to_string()))
            .collect::<Result<_>>()?
    };
    let manifest = Manifest { config: cfg.clone(), inputs, files };
    write_json(&cfg.out_dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Runs one stage against the artifacts already in the output directory.
/// The configuration is validated and its seeds derived first.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<Manifest> {
    cfg.validate()?;
    let cfg = cfg.effective();
    run_validated(&cfg, stage)?;
    write_manifest(&cfg)
}

fn run_validated(cfg: &PipelineConfig, stage: Stage) -> Result<()> {
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let marker = out.join(format!("{}.partial", stage.name()));
    fs::write(&marker, b"").map_err(|e| Error::io(&marker, e))?;
    log::info!("running stage {}", stage.name());
    let result = match stage {
        Stage::Synth => stage_synth(cfg),
        Stage::Ingest => stage_ingest(cfg),
        Stage::Stage1 => stage_stage1(cfg),
        Stage::Stage2 => stage_stage2(cfg),
        Stage::Impute => stage_impute(cfg),
        Stage::Analyze => stage_analyze(cfg),
        Stage::Sensitivity => stage_sensitivity(cfg),
    };
    match result {
        Ok(()) => fs::remove_file(&marker).map_err(|e| Error::io(&marker, e)),
        Err(e) => Err(e.in_stage(stage.name())),
    }
}

/// Runs every stage in order (the generator only for synthetic inputs) and
/// returns the final manifest.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest> {
    cfg.validate()?;
    let cfg = cfg.effective();
    for stage in Stage::ALL {
        if stage == Stage::Synth && cfg.synthetic.is_none() {
            continue;
        }
        run_validated(&cfg, stage)?;
        write_manifest(&cfg)?;
    }
    write_manifest(&cfg)
}

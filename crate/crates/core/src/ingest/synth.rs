//! Synthetic survey corpus with a known exposure effect.
//!
//! Each country is a 4°×4° box holding smooth random surfaces (random Fourier
//! features) for socioeconomic status, baseline prevalence, prevalence decline,
//! elevation and an outcome location effect. Early and late clusters are
//! jittered copies of shared sites, so stage-one matching has true partners to
//! find. Individual birthweights follow a linear model in the cluster exposure
//! and the individual covariates; missingness is logistic in the imputation
//! predictors and calibrated to the requested rate.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BirthSize, ClusterMeta, Covariate, Epoch, IndividualRecord, N_COVARIATES};
use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::rng::{indexed_substream, substream, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_countries: usize,
    pub clusters_per_country_early: usize,
    pub clusters_per_country_late: usize,
    pub individuals_per_cluster: usize,
    /// Grams of birthweight per unit of prevalence.
    pub true_beta1: f64,
    /// Multiplier on the individual covariate effects.
    pub covariate_effect_scale: f64,
    pub missingness_rate_target: f64,
    /// Length scale of the spatial surfaces, in degrees.
    pub spatial_smoothness: f64,
    pub seed: u64,
    pub multiple_birth_rate: f64,
    pub missing_size_rate: f64,
    /// Radius of the displacement of a cluster around its site, in km.
    pub jitter_km: f64,
    /// Probability that a cluster sits on a shared site rather than anywhere in the country.
    pub site_overlap: f64,
    /// Strength of the dependence of prevalence decline on socioeconomic status.
    pub confounding: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_countries: 18,
            clusters_per_country_early: 40,
            clusters_per_country_late: 40,
            individuals_per_cluster: 30,
            true_beta1: -150.0,
            covariate_effect_scale: 1.0,
            missingness_rate_target: 0.45,
            spatial_smoothness: 0.75,
            seed: 42,
            multiple_birth_rate: 0.037,
            missing_size_rate: 0.065,
            jitter_km: 10.0,
            site_overlap: 0.9,
            confounding: 0.3,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_countries", self.n_countries),
            ("clusters_per_country_early", self.clusters_per_country_early),
            ("clusters_per_country_late", self.clusters_per_country_late),
            ("individuals_per_cluster", self.individuals_per_cluster),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::validation(name, "must be positive"));
            }
        }
        let unit = [
            ("missingness_rate_target", self.missingness_rate_target),
            ("multiple_birth_rate", self.multiple_birth_rate),
            ("missing_size_rate", self.missing_size_rate),
            ("site_overlap", self.site_overlap),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(name, format!("{v} outside [0, 1]")));
            }
        }
        if !(self.spatial_smoothness > 0.0) {
            return Err(Error::validation("spatial_smoothness", "must be positive"));
        }
        if !(self.jitter_km >= 0.0) {
            return Err(Error::validation("jitter_km", "must be non-negative"));
        }
        for (name, v) in [
            ("true_beta1", self.true_beta1),
            ("covariate_effect_scale", self.covariate_effect_scale),
            ("confounding", self.confounding),
        ] {
            if !v.is_finite() {
                return Err(Error::validation(name, "must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTruth {
    pub cluster_id: String,
    pub socioeconomic_status: f64,
    /// Mean of the true birthweights of all of the cluster's individuals,
    /// observed or not.
    pub latent_mean_birthweight_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SyntheticConfig,
    pub true_beta1: f64,
    /// Individual-level coefficients used for the non-exposure covariates.
    pub individual_coefficients: Vec<(String, f64)>,
    pub realized_missing_rate: f64,
    pub realized_multiple_birth_rate: f64,
    pub clusters: Vec<ClusterTruth>,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub individuals: Vec<IndividualRecord>,
    pub clusters: Vec<ClusterMeta>,
    pub truth: GroundTruth,
}

/// Individual-level birthweight coefficients, in grams.
const AGE: f64 = 8.10;
const AGE_SQ: f64 = -0.17;
const WEALTH: f64 = 0.79;
const ORDER: f64 = 52.33;
const ORDER_SQ: f64 = -2.69;
const URBAN: f64 = -20.19;
const EDUCATION: f64 = 77.52;
const BOY: f64 = 60.58;
const MARRIED: f64 = -24.09;
const ANTENATAL: f64 = -73.57;

const BASE_BIRTHWEIGHT: f64 = 3000.0;
const LATE_TREND_G: f64 = 15.0;
const COUNTRY_SD_G: f64 = 40.0;
const CLUSTER_SD_G: f64 = 25.0;
const LOCATION_EFFECT_G: f64 = 25.0;
const INDIVIDUAL_SD_G: f64 = 420.0;
const MULTIPLE_BIRTH_PENALTY_G: f64 = 700.0;
const SIZE_REPORT_SD_G: f64 = 150.0;
const SMALL_BELOW_G: f64 = 2700.0;
const LARGE_ABOVE_G: f64 = 3550.0;

const KM_PER_DEGREE: f64 = 111.195;
const COUNTRY_HALF_WIDTH_DEG: f64 = 2.0;
const N_FEATURES: usize = 32;

/// Stationary random field with unit variance, built from random Fourier features.
struct SmoothField {
    features: Vec<(f64, f64, f64, f64)>,
}

impl SmoothField {
    fn new(rng: &mut StreamRng, length_scale: f64) -> Self {
        let features = (0..N_FEATURES)
            .map(|_| {
                let wx: f64 = rng.sample::<f64, _>(StandardNormal) / length_scale;
                let wy: f64 = rng.sample::<f64, _>(StandardNormal) / length_scale;
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let amp: f64 = rng.sample(StandardNormal);
                (wx, wy, phase, amp)
            })
            .collect();
        SmoothField { features }
    }

    fn at(&self, lon: f64, lat: f64) -> f64 {
        let s: f64 = self
            .features
            .iter()
            .map(|&(wx, wy, ph, a)| a * (wx * lon + wy * lat + ph).cos())
            .sum();
        s * (2.0 / N_FEATURES as f64).sqrt()
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn ordinal(latent: f64, cuts: &[f64], lowest: u8) -> f64 {
    f64::from(lowest) + cuts.iter().filter(|&&c| latent > c).count() as f64
}

struct Country {
    metas: Vec<ClusterMeta>,
    individuals: Vec<IndividualRecord>,
    /// True birthweight per individual, aligned with `individuals`.
    true_bw: Vec<f64>,
    truths: Vec<ClusterTruth>,
}

fn uniform_in_box(rng: &mut StreamRng, lon0: f64, lat0: f64) -> (f64, f64) {
    let h = COUNTRY_HALF_WIDTH_DEG;
    (
        lon0 + rng.random_range(-h..h),
        lat0 + rng.random_range(-h..h),
    )
}

fn jitter(rng: &mut StreamRng, (lon, lat): (f64, f64), radius_km: f64) -> (f64, f64) {
    let r = radius_km * rng.random::<f64>().sqrt();
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let dlat = r * theta.sin() / KM_PER_DEGREE;
    let dlon = r * theta.cos() / (KM_PER_DEGREE * lat.to_radians().cos());
    (lon + dlon, lat + dlat)
}

fn generate_country(cfg: &SyntheticConfig, k: usize) -> Country {
    let mut rng = indexed_substream(cfg.seed, "synth/country", k as u64);
    let code = format!("C{:02}", k + 1);
    let lon0 = rng.random_range(-15.0..38.0);
    let lat0 = rng.random_range(-15.0..12.0);
    let ell = cfg.spatial_smoothness;
    let ses_f = SmoothField::new(&mut rng, ell);
    let pf_f = SmoothField::new(&mut rng, ell);
    let dec_f = SmoothField::new(&mut rng, ell);
    let elev_f = SmoothField::new(&mut rng, ell);
    let loc_f = SmoothField::new(&mut rng, ell);
    let country_effect = COUNTRY_SD_G * rng.sample::<f64, _>(StandardNormal);
    let base_prevalence = rng.random_range(0.2..0.45);

    let n_sites = cfg.clusters_per_country_early.max(cfg.clusters_per_country_late);
    let sites: Vec<(f64, f64)> = (0..n_sites).map(|_| uniform_in_box(&mut rng, lon0, lat0)).collect();
    let noise = |rng: &mut StreamRng, sd: f64| sd * rng.sample::<f64, _>(StandardNormal);

    let mut out = Country {
        metas: Vec::new(),
        individuals: Vec::new(),
        true_bw: Vec::new(),
        truths: Vec::new(),
    };
    let scale = cfg.covariate_effect_scale;

    for (epoch, count) in [
        (Epoch::Early, cfg.clusters_per_country_early),
        (Epoch::Late, cfg.clusters_per_country_late),
    ] {
        for (i, &site) in sites.iter().enumerate().take(count) {
            let (lon, lat) = if rng.random::<f64>() < cfg.site_overlap {
                jitter(&mut rng, site, cfg.jitter_km)
            } else {
                uniform_in_box(&mut rng, lon0, lat0)
            };
            let ses_surface = ses_f.at(lon, lat);
            let late = epoch == Epoch::Late;
            let ses = 0.9 * ses_surface + noise(&mut rng, 0.45) + if late { 0.25 } else { 0.0 };
            let surface = base_prevalence + 0.18 * pf_f.at(lon, lat) - 0.05 * ses_surface;
            let decline = if late {
                0.07 + 0.09 * dec_f.at(lon, lat) + cfg.confounding * 0.05 * ses_surface
            } else {
                0.0
            };
            let pfpr = (surface - decline + noise(&mut rng, 0.015)).clamp(0.0, 1.0);
            let elevation = 600.0 + 250.0 * elev_f.at(lon, lat);
            let cluster_id = format!("{code}-{}-{:03}", if late { "L" } else { "E" }, i + 1);

            let cluster_effect = country_effect
                + if late { LATE_TREND_G } else { 0.0 }
                + LOCATION_EFFECT_G * loc_f.at(lon, lat)
                + noise(&mut rng, CLUSTER_SD_G);
            // Cluster-specific shifts of each covariate's propensity.
            let shift: Vec<f64> = (0..N_COVARIATES).map(|_| noise(&mut rng, 0.3)).collect();
            let urban = f64::from(u8::from(rng.random::<f64>() < logistic(-0.6 + 1.6 * ses)));

            let mut bw_sum = 0.0;
            for r in 0..cfg.individuals_per_cluster {
                let mut bern = |p: f64| f64::from(u8::from(rng.random::<f64>() < p));
                let electricity = bern(logistic(-0.9 + 1.3 * ses + shift[0]));
                let toilet = bern(logistic(-0.8 + 1.1 * ses + shift[2]));
                let contraception = bern(logistic(0.6 + 0.6 * ses + shift[5]));
                let sex = bern(0.51);
                let married = bern(logistic(2.0 - 0.3 * ses + shift[10]));
                let antenatal = bern(logistic(0.5 + 0.6 * ses + shift[11]));
                let mut latent = |load: f64, sh: f64| load * ses + sh + rng.sample::<f64, _>(StandardNormal);
                let floor = ordinal(latent(1.1, shift[1]), &[-0.3, 0.9], 1);
                let education = ordinal(latent(1.0, shift[4]), &[-0.2, 0.8], 0);
                let order = ordinal(latent(-0.5, shift[7]), &[-0.6, 1.3], 1);
                let wealth = ordinal(latent(1.3, shift[8]), &[-1.2, -0.4, 0.4, 1.2], 1);
                let age = (28.0 + 0.8 * ses + 2.0 * shift[6] + noise(&mut rng, 6.0)).clamp(15.0, 49.0);

                let mut covariates = [None; N_COVARIATES];
                let mut set = |c: Covariate, v: f64| covariates[c.index()] = Some(v);
                set(Covariate::Electricity, electricity);
                set(Covariate::FloorMaterial, floor);
                set(Covariate::ToiletFacility, toilet);
                set(Covariate::Urban, urban);
                set(Covariate::MotherEducation, education);
                set(Covariate::ModernContraception, contraception);
                set(Covariate::MotherAge, age);
                set(Covariate::BirthOrder, order);
                set(Covariate::WealthIndex, wealth);
                set(Covariate::ChildSex, sex);
                set(Covariate::MaritalStatus, married);
                set(Covariate::AntenatalCare, antenatal);

                let individual_effect = AGE * age
                    + AGE_SQ * age * age
                    + WEALTH * wealth
                    + ORDER * order
                    + ORDER_SQ * order * order
                    + URBAN * urban
                    + EDUCATION * education
                    + BOY * sex
                    + MARRIED * married
                    + ANTENATAL * antenatal;
                let multiple_birth = rng.random::<f64>() < cfg.multiple_birth_rate;
                let mut bw = BASE_BIRTHWEIGHT
                    + cfg.true_beta1 * pfpr
                    + scale * individual_effect
                    + cluster_effect
                    + noise(&mut rng, INDIVIDUAL_SD_G);
                if multiple_birth {
                    bw -= MULTIPLE_BIRTH_PENALTY_G;
                }
                let bw = bw.clamp(500.0, 6000.0);
                bw_sum += bw;

                let perceived = bw + noise(&mut rng, SIZE_REPORT_SD_G);
                let size = if perceived < SMALL_BELOW_G {
                    BirthSize::Small
                } else if perceived > LARGE_ABOVE_G {
                    BirthSize::Large
                } else {
                    BirthSize::Average
                };
                let reported = (rng.random::<f64>() >= cfg.missing_size_rate).then_some(size);

                out.individuals.push(IndividualRecord {
                    record_id: format!("{cluster_id}-{:03}", r + 1),
                    cluster_id: cluster_id.clone(),
                    birthweight_g: Some(bw),
                    reported_birth_size: reported,
                    multiple_birth,
                    covariates,
                });
                out.true_bw.push(bw);
            }

            out.truths.push(ClusterTruth {
                cluster_id: cluster_id.clone(),
                socioeconomic_status: ses,
                latent_mean_birthweight_g: bw_sum / cfg.individuals_per_cluster as f64,
            });
            out.metas.push(ClusterMeta {
                cluster_id,
                country: code.clone(),
                epoch,
                location: GeoPoint::new(lon, lat, elevation),
                pfpr,
            });
        }
    }
    out
}

/// Log-odds of a missing birthweight, before the calibrated intercept.
fn missingness_score(r: &IndividualRecord) -> f64 {
    let v = |c: Covariate| r.covariate(c).unwrap_or(0.0);
    0.35 * (1.0 - v(Covariate::Urban)) - 0.30 * (v(Covariate::MotherEducation) - 1.0)
        - 0.10 * (v(Covariate::WealthIndex) - 3.0)
        - 0.40 * v(Covariate::AntenatalCare)
        + 0.01 * (v(Covariate::MotherAge) - 28.0)
        + if r.reported_birth_size == Some(BirthSize::Small) { 0.25 } else { 0.0 }
}

/// Intercept making the mean missingness probability equal `target`.
fn calibrate_intercept(scores: &[f64], target: f64) -> f64 {
    if target <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if target >= 1.0 {
        return f64::INFINITY;
    }
    let mean_p = |a: f64| scores.iter().map(|s| logistic(a + s)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-30.0, 30.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let countries: Vec<Country> = (0..cfg.n_countries)
        .into_par_iter()
        .map(|k| generate_country(cfg, k))
        .collect();

    let mut individuals = Vec::new();
    let mut clusters = Vec::new();
    let mut truths = Vec::new();
    for c in countries {
        individuals.extend(c.individuals);
        clusters.extend(c.metas);
        truths.extend(c.truths);
    }

    let scores: Vec<f64> = individuals.iter().map(missingness_score).collect();
    let alpha = calibrate_intercept(&scores, cfg.missingness_rate_target);
    let mut rng = substream(cfg.seed, "synth/missingness");
    let mut n_missing = 0usize;
    for (r, s) in individuals.iter_mut().zip(&scores) {
        if rng.random::<f64>() < logistic(alpha + s) {
            r.birthweight_g = None;
            n_missing += 1;
        }
    }
    let n = individuals.len();
    let n_multiple = individuals.iter().filter(|r| r.multiple_birth).count();

    let individual_coefficients = [
        ("mother_age_years", AGE),
        ("mother_age_years_sq", AGE_SQ),
        ("wealth_index", WEALTH),
        ("birth_order", ORDER),
        ("birth_order_sq", ORDER_SQ),
        ("urban", URBAN),
        ("mother_education", EDUCATION),
        ("child_sex", BOY),
        ("marital_status", MARRIED),
        ("antenatal_care", ANTENATAL),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v * cfg.covariate_effect_scale))
    .collect();

    let truth = GroundTruth {
        config: cfg.clone(),
        true_beta1: cfg.true_beta1,
        individual_coefficients,
        realized_missing_rate: n_missing as f64 / n as f64,
        realized_multiple_birth_rate: n_multiple as f64 / n as f64,
        clusters: truths,
    };
    Ok(SyntheticData {
        individuals,
        clusters,
        truth,
    })
}

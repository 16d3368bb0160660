//! Data model, CSV input/output, record filters, cluster aggregation and the
//! synthetic data generator.

mod aggregate;
pub(crate) mod csvio;
mod filter;
mod synth;

use serde::{Deserialize, Serialize};

use crate::geo::GeoPoint;

pub use aggregate::{aggregate_all, aggregate_cluster};
pub use csvio::{
    load_cluster_meta, load_cluster_records, load_individuals, write_cluster_meta,
    write_cluster_records, write_individuals, ColumnMapping, LoadReport, RowReject,
};
pub use filter::{filter_records, FilterAudit, FilterStage};
pub use synth::{generate_synthetic, ClusterTruth, GroundTruth, SyntheticConfig, SyntheticData};

pub const N_COVARIATES: usize = 12;

/// The twelve cluster-level covariates, in their fixed schema order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    Electricity,
    FloorMaterial,
    ToiletFacility,
    Urban,
    MotherEducation,
    ModernContraception,
    MotherAge,
    BirthOrder,
    WealthIndex,
    ChildSex,
    MaritalStatus,
    AntenatalCare,
}

pub const COVARIATES: [Covariate; N_COVARIATES] = [
    Covariate::Electricity,
    Covariate::FloorMaterial,
    Covariate::ToiletFacility,
    Covariate::Urban,
    Covariate::MotherEducation,
    Covariate::ModernContraception,
    Covariate::MotherAge,
    Covariate::BirthOrder,
    Covariate::WealthIndex,
    Covariate::ChildSex,
    Covariate::MaritalStatus,
    Covariate::AntenatalCare,
];

/// Kind of values a covariate takes at the individual level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scale {
    /// Integer levels `lo..=hi`.
    Ordinal { lo: u8, hi: u8 },
    /// Real values in `[lo, hi]`.
    Continuous { lo: f64, hi: f64 },
}

impl Covariate {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Covariate::Electricity => "electricity",
            Covariate::FloorMaterial => "floor_material",
            Covariate::ToiletFacility => "toilet_facility",
            Covariate::Urban => "urban",
            Covariate::MotherEducation => "mother_education",
            Covariate::ModernContraception => "modern_contraception",
            Covariate::MotherAge => "mother_age_years",
            Covariate::BirthOrder => "birth_order",
            Covariate::WealthIndex => "wealth_index",
            Covariate::ChildSex => "child_sex",
            Covariate::MaritalStatus => "marital_status",
            Covariate::AntenatalCare => "antenatal_care",
        }
    }

    pub fn from_name(name: &str) -> Option<Covariate> {
        COVARIATES.iter().copied().find(|c| c.name() == name)
    }

    pub fn scale(self) -> Scale {
        match self {
            Covariate::FloorMaterial | Covariate::BirthOrder => Scale::Ordinal { lo: 1, hi: 3 },
            Covariate::MotherEducation => Scale::Ordinal { lo: 0, hi: 2 },
            Covariate::WealthIndex => Scale::Ordinal { lo: 1, hi: 5 },
            Covariate::MotherAge => Scale::Continuous { lo: 10.0, hi: 60.0 },
            _ => Scale::Ordinal { lo: 0, hi: 1 },
        }
    }

    /// Checks an individual-level value against the covariate's declared range.
    pub fn validate(self, value: f64) -> std::result::Result<(), String> {
        match self.scale() {
            Scale::Ordinal { lo, hi } => {
                if value.fract() != 0.0 || value < f64::from(lo) || value > f64::from(hi) {
                    return Err(format!("{value} is not an integer level in {lo}..={hi}"));
                }
            }
            Scale::Continuous { lo, hi } => {
                if !(lo..=hi).contains(&value) {
                    return Err(format!("{value} outside [{lo}, {hi}]"));
                }
            }
        }
        Ok(())
    }
}

/// Mother's report of the child's size at birth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BirthSize {
    Small = 1,
    Average = 2,
    Large = 3,
}

impl BirthSize {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<BirthSize> {
        match code {
            1 => Some(BirthSize::Small),
            2 => Some(BirthSize::Average),
            3 => Some(BirthSize::Large),
            _ => None,
        }
    }
}

/// One child's survey row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualRecord {
    pub record_id: String,
    pub cluster_id: String,
    pub birthweight_g: Option<f64>,
    pub reported_birth_size: Option<BirthSize>,
    pub multiple_birth: bool,
    /// Indexed by [`Covariate::index`]; `None` marks a missing cell.
    pub covariates: [Option<f64>; N_COVARIATES],
}

impl IndividualRecord {
    pub fn covariate(&self, c: Covariate) -> Option<f64> {
        self.covariates[c.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Epoch {
    Early,
    Late,
}

impl Epoch {
    pub fn as_str(self) -> &'static str {
        match self {
            Epoch::Early => "early",
            Epoch::Late => "late",
        }
    }

    pub fn parse(s: &str) -> Option<Epoch> {
        match s.trim().to_ascii_lowercase().as_str() {
            "early" => Some(Epoch::Early),
            "late" => Some(Epoch::Late),
            _ => None,
        }
    }
}

/// Location, epoch and exposure of a cluster, as read from the companion file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMeta {
    pub cluster_id: String,
    pub country: String,
    pub epoch: Epoch,
    pub location: GeoPoint,
    pub pfpr: f64,
}

impl ClusterMeta {
    pub fn validate(&self) -> crate::Result<()> {
        let loc = &self.location;
        if !(0.0..=1.0).contains(&self.pfpr) {
            return Err(crate::Error::validation(
                "pfpr",
                format!("cluster {}: {} outside [0, 1]", self.cluster_id, self.pfpr),
            ));
        }
        if !(-180.0..=180.0).contains(&loc.longitude_deg) {
            return Err(crate::Error::validation(
                "longitude_deg",
                format!("cluster {}: {} outside [-180, 180]", self.cluster_id, loc.longitude_deg),
            ));
        }
        if !(-90.0..=90.0).contains(&loc.latitude_deg) {
            return Err(crate::Error::validation(
                "latitude_deg",
                format!("cluster {}: {} outside [-90, 90]", self.cluster_id, loc.latitude_deg),
            ));
        }
        if !loc.elevation_m.is_finite() {
            return Err(crate::Error::validation("elevation_m", "not finite"));
        }
        Ok(())
    }
}

/// One survey cluster-year with covariates aggregated from its individuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub cluster_id: String,
    pub country: String,
    pub epoch: Epoch,
    pub location: GeoPoint,
    pub pfpr: f64,
    /// Within-cluster means, in [`COVARIATES`] order.
    pub covariates: [f64; N_COVARIATES],
    pub mean_birthweight_g: Option<f64>,
    pub n_individuals: usize,
}

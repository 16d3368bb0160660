use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    BirthSize, ClusterMeta, ClusterRecord, Covariate, Epoch, IndividualRecord, COVARIATES,
    N_COVARIATES,
};
use crate::error::{Error, Result};
use crate::geo::GeoPoint;

pub(crate) const INDIVIDUAL_FIXED: [&str; 5] = [
    "record_id",
    "cluster_id",
    "birthweight_g",
    "reported_birth_size",
    "multiple_birth",
];

const META_COLUMNS: [&str; 7] = [
    "cluster_id",
    "country",
    "epoch",
    "longitude_deg",
    "latitude_deg",
    "elevation_m",
    "pfpr",
];

/// Maps canonical field names onto the header names used by an input file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    #[serde(default)]
    pub overrides: HashMap<String, String>,
}

impl ColumnMapping {
    pub fn with_override(mut self, field: &str, header: &str) -> Self {
        self.overrides.insert(field.to_string(), header.to_string());
        self
    }

    pub fn header_for<'a>(&'a self, field: &'a str) -> &'a str {
        self.overrides.get(field).map(String::as_str).unwrap_or(field)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowReject {
    /// 1-based line number in the file (the header is line 1).
    pub line: usize,
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub records: Vec<IndividualRecord>,
    pub rejects: Vec<RowReject>,
    pub missing_birthweight: usize,
    pub missing_birth_size: usize,
}

impl LoadReport {
    pub fn missing_birthweight_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.missing_birthweight as f64 / self.records.len() as f64
    }

    /// Fails with the first rejected row, if any.
    pub fn into_records_strict(self) -> Result<Vec<IndividualRecord>> {
        match self.rejects.into_iter().next() {
            Some(r) => Err(Error::Row {
                row: r.line,
                field: r.field,
                message: r.message,
            }),
            None => Ok(self.records),
        }
    }
}

pub(crate) fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

pub(crate) fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

pub(crate) fn parse_opt_f64(raw: &str) -> std::result::Result<Option<f64>, String> {
    if raw.is_empty() {
        return Ok(None);
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(v) => Err(format!("non-finite value {v}")),
        Err(_) => Err(format!("cannot parse `{raw}` as a number")),
    }
}

pub(crate) fn parse_f64(raw: &str) -> std::result::Result<f64, String> {
    parse_opt_f64(raw)?.ok_or_else(|| "required value is empty".to_string())
}

fn parse_bool(raw: &str) -> std::result::Result<bool, String> {
    match raw.to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        "" => Err("required value is empty".to_string()),
        _ => Err(format!("cannot parse `{raw}` as a boolean")),
    }
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_individual(
    row: &csv::StringRecord,
    idx: &[usize],
) -> std::result::Result<IndividualRecord, (String, String)> {
    let get = |k: usize| row.get(idx[k]).unwrap_or("");
    let field_err = |k: usize| {
        let name = if k < INDIVIDUAL_FIXED.len() {
            INDIVIDUAL_FIXED[k].to_string()
        } else {
            COVARIATES[k - INDIVIDUAL_FIXED.len()].name().to_string()
        };
        move |m: String| (name, m)
    };

    let record_id = get(0).to_string();
    if record_id.is_empty() {
        return Err(field_err(0)("required value is empty".into()));
    }
    let cluster_id = get(1).to_string();
    if cluster_id.is_empty() {
        return Err(field_err(1)("required value is empty".into()));
    }
    let birthweight_g = parse_opt_f64(get(2)).map_err(field_err(2))?;
    if let Some(bw) = birthweight_g {
        if !(bw > 0.0 && bw < 10_000.0) {
            return Err(field_err(2)(format!("{bw} outside (0, 10000)")));
        }
    }
    let reported_birth_size = match parse_opt_f64(get(3)).map_err(field_err(3))? {
        None => None,
        Some(v) => Some(
            (v.fract() == 0.0 && (1.0..=3.0).contains(&v))
                .then(|| BirthSize::from_code(v as u8))
                .flatten()
                .ok_or_else(|| field_err(3)(format!("{v} is not a level in 1..=3")))?,
        ),
    };
    let multiple_birth = parse_bool(get(4)).map_err(field_err(4))?;

    let mut covariates = [None; N_COVARIATES];
    for (c, cov) in COVARIATES.iter().enumerate() {
        let k = INDIVIDUAL_FIXED.len() + c;
        let v = parse_opt_f64(get(k)).map_err(field_err(k))?;
        if let Some(x) = v {
            cov.validate(x).map_err(field_err(k))?;
        }
        covariates[c] = v;
    }
    Ok(IndividualRecord {
        record_id,
        cluster_id,
        birthweight_g,
        reported_birth_size,
        multiple_birth,
        covariates,
    })
}

/// Reads individual records. Header problems and I/O failures are errors;
/// malformed or out-of-range rows are collected as [`RowReject`]s.
pub fn load_individuals(path: &Path, mapping: &ColumnMapping) -> Result<LoadReport> {
    let mut reader = open(path)?;
    let headers = reader.headers()?.clone();
    let names: Vec<&str> = INDIVIDUAL_FIXED
        .iter()
        .copied()
        .chain(COVARIATES.iter().map(|c| c.name()))
        .collect();
    let idx = names
        .iter()
        .map(|n| column_index(&headers, mapping.header_for(n)))
        .collect::<Result<Vec<_>>>()?;

    let mut report = LoadReport::default();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                report.rejects.push(RowReject {
                    line,
                    field: "<row>".into(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        match parse_individual(&row, &idx) {
            Ok(rec) => {
                report.missing_birthweight += usize::from(rec.birthweight_g.is_none());
                report.missing_birth_size += usize::from(rec.reported_birth_size.is_none());
                report.records.push(rec);
            }
            Err((field, message)) => report.rejects.push(RowReject {
                line,
                field,
                message,
            }),
        }
    }
    if !report.rejects.is_empty() {
        log::warn!("{}: {} rows rejected", path.display(), report.rejects.len());
    }
    Ok(report)
}

pub(crate) fn create(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn write_individuals(path: &Path, records: &[IndividualRecord]) -> Result<()> {
    let mut w = create(path)?;
    let header: Vec<&str> = INDIVIDUAL_FIXED
        .iter()
        .copied()
        .chain(COVARIATES.iter().map(|c| c.name()))
        .collect();
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.record_id.clone(),
            r.cluster_id.clone(),
            fmt_opt(r.birthweight_g),
            r.reported_birth_size
                .map(|s| s.code().to_string())
                .unwrap_or_default(),
            u8::from(r.multiple_birth).to_string(),
        ];
        row.extend(r.covariates.iter().map(|v| fmt_opt(*v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn parse_meta(row: &csv::StringRecord, idx: &[usize], line: usize) -> Result<ClusterMeta> {
    let get = |k: usize| row.get(idx[k]).unwrap_or("");
    let num = |k: usize| {
        parse_f64(get(k)).map_err(|message| Error::Row {
            row: line,
            field: META_COLUMNS[k].to_string(),
            message,
        })
    };
    let epoch = Epoch::parse(get(2)).ok_or_else(|| Error::Row {
        row: line,
        field: "epoch".into(),
        message: format!("`{}` is neither early nor late", get(2)),
    })?;
    let meta = ClusterMeta {
        cluster_id: get(0).to_string(),
        country: get(1).to_string(),
        epoch,
        location: GeoPoint::new(num(3)?, num(4)?, num(5)?),
        pfpr: num(6)?,
    };
    if meta.cluster_id.is_empty() {
        return Err(Error::Row {
            row: line,
            field: "cluster_id".into(),
            message: "required value is empty".into(),
        });
    }
    meta.validate()?;
    Ok(meta)
}

/// Reads the companion cluster file (location, epoch, exposure).
pub fn load_cluster_meta(path: &Path, mapping: &ColumnMapping) -> Result<Vec<ClusterMeta>> {
    let mut reader = open(path)?;
    let headers = reader.headers()?.clone();
    let idx = META_COLUMNS
        .iter()
        .map(|n| column_index(&headers, mapping.header_for(n)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        out.push(parse_meta(&row?, &idx, i + 2)?);
    }
    Ok(out)
}

fn meta_fields(m: &ClusterMeta) -> Vec<String> {
    vec![
        m.cluster_id.clone(),
        m.country.clone(),
        m.epoch.as_str().to_string(),
        m.location.longitude_deg.to_string(),
        m.location.latitude_deg.to_string(),
        m.location.elevation_m.to_string(),
        m.pfpr.to_string(),
    ]
}

pub fn write_cluster_meta(path: &Path, metas: &[ClusterMeta]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(META_COLUMNS)?;
    for m in metas {
        w.write_record(meta_fields(m))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes aggregated clusters: the meta columns, the twelve covariate means,
/// `mean_birthweight_g` and `n_individuals`.
pub fn write_cluster_records(path: &Path, clusters: &[ClusterRecord]) -> Result<()> {
    let mut w = create(path)?;
    let mut header: Vec<&str> = META_COLUMNS.to_vec();
    header.extend(COVARIATES.iter().map(|c| c.name()));
    header.extend(["mean_birthweight_g", "n_individuals"]);
    w.write_record(&header)?;
    for c in clusters {
        let mut row = meta_fields(&c.meta());
        row.extend(c.covariates.iter().map(|v| v.to_string()));
        row.push(fmt_opt(c.mean_birthweight_g));
        row.push(c.n_individuals.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_cluster_records(path: &Path) -> Result<Vec<ClusterRecord>> {
    let mut reader = open(path)?;
    let headers = reader.headers()?.clone();
    let meta_idx = META_COLUMNS
        .iter()
        .map(|n| column_index(&headers, n))
        .collect::<Result<Vec<_>>>()?;
    let cov_idx = COVARIATES
        .iter()
        .map(|c| column_index(&headers, c.name()))
        .collect::<Result<Vec<_>>>()?;
    let bw_idx = column_index(&headers, "mean_birthweight_g")?;
    let n_idx = column_index(&headers, "n_individuals")?;

    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let meta = parse_meta(&row, &meta_idx, line)?;
        let row_err = |field: &str, message: String| Error::Row {
            row: line,
            field: field.to_string(),
            message,
        };
        let mut covariates = [0.0; N_COVARIATES];
        for (c, &k) in cov_idx.iter().enumerate() {
            covariates[c] = parse_f64(row.get(k).unwrap_or(""))
                .map_err(|m| row_err(COVARIATES[c].name(), m))?;
        }
        let mean_birthweight_g = parse_opt_f64(row.get(bw_idx).unwrap_or(""))
            .map_err(|m| row_err("mean_birthweight_g", m))?;
        let n_individuals = row
            .get(n_idx)
            .unwrap_or("")
            .parse::<usize>()
            .map_err(|e| row_err("n_individuals", e.to_string()))?;
        out.push(ClusterRecord {
            cluster_id: meta.cluster_id,
            country: meta.country,
            epoch: meta.epoch,
            location: meta.location,
            pfpr: meta.pfpr,
            covariates,
            mean_birthweight_g,
            n_individuals,
        });
    }
    Ok(out)
}

impl ClusterRecord {
    pub fn meta(&self) -> ClusterMeta {
        ClusterMeta {
            cluster_id: self.cluster_id.clone(),
            country: self.country.clone(),
            epoch: self.epoch,
            location: self.location,
            pfpr: self.pfpr,
        }
    }

    pub fn covariate(&self, c: Covariate) -> f64 {
        self.covariates[c.index()]
    }
}

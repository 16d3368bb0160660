use serde::{Deserialize, Serialize};

use super::IndividualRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterStage {
    pub name: String,
    pub input: usize,
    pub removed: usize,
    /// `removed / input`, 0 for an empty stage input.
    pub fraction_removed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterAudit {
    pub input: usize,
    pub multiple_birth_removed: usize,
    pub missing_size_removed: usize,
    pub kept: usize,
    /// Stages in the order they were applied.
    pub stages: Vec<FilterStage>,
}

fn stage(name: &str, input: usize, removed: usize) -> FilterStage {
    FilterStage {
        name: name.to_string(),
        input,
        removed,
        fraction_removed: if input == 0 { 0.0 } else { removed as f64 / input as f64 },
    }
}

/// Drops multiple births, then records without the mother's birth-size report.
pub fn filter_records(records: Vec<IndividualRecord>) -> (Vec<IndividualRecord>, FilterAudit) {
    let input = records.len();
    let singletons: Vec<_> = records.into_iter().filter(|r| !r.multiple_birth).collect();
    let after_births = singletons.len();
    let kept: Vec<_> = singletons
        .into_iter()
        .filter(|r| r.reported_birth_size.is_some())
        .collect();
    let audit = FilterAudit {
        input,
        multiple_birth_removed: input - after_births,
        missing_size_removed: after_births - kept.len(),
        kept: kept.len(),
        stages: vec![
            stage("multiple_birth", input, input - after_births),
            stage("missing_birth_size", after_births, after_births - kept.len()),
        ],
    };
    (kept, audit)
}

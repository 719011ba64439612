use std::collections::BTreeMap;

use super::Dataset;
use crate::error::{check_dim, Error, Result};

/// Overwrites the CRP slot with the high-sensitivity reading wherever one
/// exists. Rows without an hsCRP value are left untouched.
pub fn apply_hscrp_rule(raw: &Dataset, crp_id: usize, hscrp: Option<&[Option<f64>]>) -> Result<Dataset> {
    if crp_id >= raw.n_features() {
        return Err(Error::Schema(format!(
            "CRP id {crp_id} out of range for {} features",
            raw.n_features()
        )));
    }
    let Some(hscrp) = hscrp else {
        return Ok(raw.clone());
    };
    check_dim(raw.n_samples(), hscrp.len())?;
    let (schema, mut values, labels, names) = raw.clone().into_parts();
    for (row, hs) in values.iter_mut().zip(hscrp) {
        if let Some(v) = hs {
            row[crp_id] = Some(*v);
        }
    }
    Dataset::new(schema, values, labels, names)
}

/// Drops every feature that is missing on at least half of the samples of
/// any group. Returns the reduced dataset and the kept (original) ids.
pub fn filter_features<G: Ord>(data: &Dataset, groups: &[G]) -> Result<(Dataset, Vec<usize>)> {
    check_dim(data.n_samples(), groups.len())?;
    let d = data.n_features();
    // group -> (size, missing count per feature)
    let mut tally: BTreeMap<&G, (usize, Vec<usize>)> = BTreeMap::new();
    for (row, g) in data.values().iter().zip(groups) {
        let entry = tally.entry(g).or_insert_with(|| (0, vec![0; d]));
        entry.0 += 1;
        for (j, v) in row.iter().enumerate() {
            if v.is_none() {
                entry.1[j] += 1;
            }
        }
    }
    let kept: Vec<usize> = (0..d)
        .filter(|&j| tally.values().all(|(size, missing)| 2 * missing[j] < *size))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptySchema);
    }
    Ok((data.select_features(&kept), kept))
}

/// Drops every subject missing strictly more than 20% of its features.
pub fn filter_subjects(data: &Dataset) -> Result<(Dataset, Vec<usize>)> {
    let d = data.n_features();
    if d == 0 {
        return Err(Error::EmptySchema);
    }
    let kept: Vec<usize> = data
        .values()
        .iter()
        .enumerate()
        .filter(|(_, row)| 5 * row.iter().filter(|v| v.is_none()).count() <= d)
        .map(|(i, _)| i)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((data.select_rows(&kept), kept))
}

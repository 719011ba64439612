use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{check_dim, Error, Result};

/// Per-feature imputation and standardization statistics, fitted on a
/// training set and applied unchanged to anything predicted later.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessParams {
    pub impute_means: Vec<f64>,
    pub standardize_means: Vec<f64>,
    /// Population standard deviations; a constant column gets 1.
    pub standardize_scales: Vec<f64>,
}

/// Fits imputation means over observed entries, then standardization
/// statistics over the imputed columns.
pub fn fit_preprocess(train: &Dataset) -> Result<PreprocessParams> {
    let rows: Vec<&[Option<f64>]> = train.values().iter().map(Vec::as_slice).collect();
    PreprocessParams::fit_rows(&rows, &|j| train.schema().features[j].name.clone(), train.n_features())
}

/// Imputes and standardizes every cell. The result has no missing values.
pub fn apply_preprocess(params: &PreprocessParams, data: &Dataset) -> Result<Dataset> {
    check_dim(params.dim(), data.n_features())?;
    let values = data
        .values()
        .iter()
        .map(|row| params.transform_row(row).map(|r| r.into_iter().map(Some).collect()))
        .collect::<Result<Vec<Vec<Option<f64>>>>>()?;
    Dataset::new(data.schema().clone(), values, data.labels().to_vec(), data.class_names().clone())
}

impl PreprocessParams {
    pub fn dim(&self) -> usize {
        self.impute_means.len()
    }

    pub(crate) fn fit_rows(
        rows: &[&[Option<f64>]],
        name_of: &dyn Fn(usize) -> String,
        d: usize,
    ) -> Result<PreprocessParams> {
        let mut impute_means = Vec::with_capacity(d);
        let mut standardize_means = Vec::with_capacity(d);
        let mut standardize_scales = Vec::with_capacity(d);
        let n = rows.len() as f64;
        for j in 0..d {
            let (sum, count) = rows
                .iter()
                .filter_map(|r| r[j])
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            if count == 0 {
                return Err(Error::NoObservedValues { feature: name_of(j) });
            }
            let fill = sum / count as f64;
            let column = || rows.iter().map(|r| r[j].unwrap_or(fill));
            let mean = column().sum::<f64>() / n;
            let var = column().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            let scale = if std > 1e-12 * (1.0 + mean.abs()) { std } else { 1.0 };
            impute_means.push(fill);
            standardize_means.push(mean);
            standardize_scales.push(scale);
        }
        Ok(PreprocessParams {
            impute_means,
            standardize_means,
            standardize_scales,
        })
    }

    /// Imputes and standardizes a single sample.
    pub fn transform_row(&self, row: &[Option<f64>]) -> Result<Vec<f64>> {
        check_dim(self.dim(), row.len())?;
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let v = v.unwrap_or(self.impute_means[j]);
                (v - self.standardize_means[j]) / self.standardize_scales[j]
            })
            .collect())
    }

    pub fn transform(&self, data: &Dataset) -> Result<Vec<Vec<f64>>> {
        check_dim(self.dim(), data.n_features())?;
        data.values().iter().map(|r| self.transform_row(r)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        check_dim(d, self.standardize_means.len())?;
        check_dim(d, self.standardize_scales.len())?;
        let finite = self
            .impute_means
            .iter()
            .chain(&self.standardize_means)
            .all(|v| v.is_finite());
        if !finite || self.standardize_scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Schema("preprocessing parameters must be finite with positive scales".into()));
        }
        Ok(())
    }
}

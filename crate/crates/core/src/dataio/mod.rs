//! Tabular data: feature schemas, datasets with explicit missing values,
//! CSV ingestion, the sparsity filters, imputation/standardization and a
//! synthetic-cohort generator.
//!
//! A missing measurement is `None`. Every other `Some(v)` is a valid
//! reading, so the marker can never collide with a measured value.

mod csvio;
mod filter;
mod preprocess;
mod synthetic;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use csvio::{
    load_csv, load_csv_with_extras, load_feature_rows, parse_optional_column, read_feature_rows, write_csv, DataSidecar,
};
pub use filter::{apply_hscrp_rule, filter_features, filter_subjects};
pub use preprocess::{apply_preprocess, fit_preprocess, PreprocessParams};
pub use synthetic::{gen_synthetic, ClassDistribution, Covariance, SyntheticSpec};

/// Binary class label. `Positive` is `+1`, `Negative` is `-1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    /// `+1.0` or `-1.0`.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    /// Label of a decision score; zero maps to the positive class.
    #[inline]
    pub fn from_score(score: f64) -> Label {
        if score >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn opposite(self) -> Label {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        match l {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, Self::Error> {
        match v {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            other => Err(format!("label must be +1 or -1, got {other}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Positive => f.write_str("+1"),
            Label::Negative => f.write_str("-1"),
        }
    }
}

/// Per-class multiplicative sample weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub positive: f64,
    pub negative: f64,
}

impl ClassWeights {
    pub const UNIT: ClassWeights = ClassWeights {
        positive: 1.0,
        negative: 1.0,
    };

    #[inline]
    pub fn get(&self, label: Label) -> f64 {
        match label {
            Label::Positive => self.positive,
            Label::Negative => self.negative,
        }
    }

    /// `N / (2 N_c)` per class: inversely proportional to class size and
    /// equal to 1 on balanced data.
    pub fn balanced(labels: &[Label]) -> Result<Self> {
        require_both_classes(labels)?;
        let n = labels.len() as f64;
        let pos = labels.iter().filter(|&&l| l == Label::Positive).count() as f64;
        let neg = n - pos;
        Ok(ClassWeights {
            positive: n / (2.0 * pos),
            negative: n / (2.0 * neg),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.positive > 0.0 && self.negative > 0.0 && self.positive.is_finite() && self.negative.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidHyperparameter(format!(
                "class weights must be positive and finite, got {self:?}"
            )))
        }
    }
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights::UNIT
    }
}

/// Human-readable names of the two classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassNames {
    pub positive: String,
    pub negative: String,
}

impl ClassNames {
    pub fn new(positive: impl Into<String>, negative: impl Into<String>) -> Self {
        ClassNames {
            positive: positive.into(),
            negative: negative.into(),
        }
    }

    pub fn name(&self, label: Label) -> &str {
        match label {
            Label::Positive => &self.positive,
            Label::Negative => &self.negative,
        }
    }

    pub fn parse(&self, s: &str) -> Option<Label> {
        if s == self.positive {
            Some(Label::Positive)
        } else if s == self.negative {
            Some(Label::Negative)
        } else {
            None
        }
    }
}

impl Default for ClassNames {
    fn default() -> Self {
        ClassNames::new("positive", "negative")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub id: usize,
    pub name: String,
    pub unit: String,
}

/// How the gender column is coded when demographics are included.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenderEncoding {
    pub zero: String,
    pub one: String,
}

/// Ordered feature list fixing the meaning of every vector slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureDescriptor>,
    #[serde(default)]
    pub has_age_gender: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender_encoding: Option<GenderEncoding>,
}

const BLOOD_PANEL: [(&str, &str); 13] = [
    ("WBC", "10^9/L"),
    ("HGB", "g/L"),
    ("platelet", "10^9/L"),
    ("neutrophil %", "%"),
    ("neutrophil #", "10^9/L"),
    ("lymphocyte %", "%"),
    ("lymphocyte #", "10^9/L"),
    ("CRP", "mg/L"),
    ("TBil", "umol/L"),
    ("BUN", "mmol/L"),
    ("creatinine", "umol/L"),
    ("LDH", "U/L"),
    ("D-dimer", "mg/L"),
];

impl FeatureSchema {
    /// Builds a schema from `(name, unit)` pairs, assigning ids in order.
    pub fn new<N, U>(features: impl IntoIterator<Item = (N, U)>) -> Result<Self>
    where
        N: Into<String>,
        U: Into<String>,
    {
        let features = features
            .into_iter()
            .enumerate()
            .map(|(id, (name, unit))| FeatureDescriptor {
                id,
                name: name.into(),
                unit: unit.into(),
            })
            .collect();
        let schema = FeatureSchema {
            features,
            has_age_gender: false,
            gender_encoding: None,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// `f0`, `f1`, ... with empty units.
    pub fn generic(d: usize) -> Self {
        FeatureSchema::new((0..d).map(|i| (format!("f{i}"), ""))).expect("generic names are unique")
    }

    /// The thirteen routine blood tests shared by all cohorts, optionally
    /// followed by age (years) and gender (0 = female, 1 = male).
    pub fn blood_panel(with_demographics: bool) -> Self {
        let mut pairs: Vec<(String, String)> = BLOOD_PANEL
            .iter()
            .map(|(n, u)| (n.to_string(), u.to_string()))
            .collect();
        if with_demographics {
            pairs.push(("age".into(), "years".into()));
            pairs.push(("gender".into(), "0/1".into()));
        }
        let mut schema = FeatureSchema::new(pairs).expect("panel names are unique");
        if with_demographics {
            schema.has_age_gender = true;
            schema.gender_encoding = Some(GenderEncoding {
                zero: "female".into(),
                one: "male".into(),
            });
        }
        schema
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, f) in self.features.iter().enumerate() {
            if f.id != i {
                return Err(Error::Schema(format!(
                    "feature '{}' has id {} at position {i}",
                    f.name, f.id
                )));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name '{}'", f.name)));
            }
        }
        Ok(())
    }

    /// Keeps the listed features (in the given order) and renumbers ids.
    pub fn select(&self, keep: &[usize]) -> Self {
        let features = keep
            .iter()
            .enumerate()
            .map(|(new_id, &old)| FeatureDescriptor {
                id: new_id,
                ..self.features[old].clone()
            })
            .collect::<Vec<_>>();
        let has_gender = features.iter().any(|f| f.name == "gender");
        FeatureSchema {
            has_age_gender: self.has_age_gender && has_gender,
            gender_encoding: if has_gender {
                self.gender_encoding.clone()
            } else {
                None
            },
            features,
        }
    }

    /// Short content hash of the ordered names and units.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for f in &self.features {
            h.update(f.name.as_bytes());
            h.update([0x1f]);
            h.update(f.unit.as_bytes());
            h.update([0x1e]);
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// An `N x d` matrix of optional readings with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: FeatureSchema,
    values: Vec<Vec<Option<f64>>>,
    labels: Vec<Label>,
    class_names: ClassNames,
}

impl Dataset {
    pub fn new(
        schema: FeatureSchema,
        values: Vec<Vec<Option<f64>>>,
        labels: Vec<Label>,
        class_names: ClassNames,
    ) -> Result<Self> {
        schema.validate()?;
        if values.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                found: labels.len(),
            });
        }
        let d = schema.len();
        for row in &values {
            crate::error::check_dim(d, row.len())?;
        }
        Ok(Dataset {
            schema,
            values,
            labels,
            class_names,
        })
    }

    /// Fully observed dataset from dense rows.
    pub fn from_dense(schema: FeatureSchema, rows: Vec<Vec<f64>>, labels: Vec<Label>) -> Result<Self> {
        let values = rows
            .into_iter()
            .map(|r| r.into_iter().map(Some).collect())
            .collect();
        Dataset::new(schema, values, labels, ClassNames::default())
    }

    pub fn with_class_names(mut self, names: ClassNames) -> Self {
        self.class_names = names;
        self
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn values(&self) -> &[Vec<Option<f64>>] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[Option<f64>] {
        &self.values[i]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn class_names(&self) -> &ClassNames {
        &self.class_names
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().flatten().filter(|v| v.is_none()).count()
    }

    /// Errors unless both classes have at least one sample.
    pub fn require_both_classes(&self) -> Result<()> {
        require_both_classes(&self.labels)
    }

    /// Dense copy of the matrix; fails on the first missing cell.
    pub fn dense(&self) -> Result<Vec<Vec<f64>>> {
        self.values
            .iter()
            .enumerate()
            .map(|(r, row)| {
                row.iter()
                    .enumerate()
                    .map(|(c, v)| v.ok_or(Error::MissingValue { row: r, feature: c }))
                    .collect()
            })
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            values: rows.iter().map(|&r| self.values[r].clone()).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn select_features(&self, keep: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.select(keep),
            values: self
                .values
                .iter()
                .map(|row| keep.iter().map(|&c| row[c]).collect())
                .collect(),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Per-class means of the observed values, `(positive, negative)`.
    /// A feature with no observation in a class yields `NaN` for that class.
    pub fn class_means(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.n_features();
        let mut sums = [vec![0.0; d], vec![0.0; d]];
        let mut counts = [vec![0usize; d], vec![0usize; d]];
        for (row, &label) in self.values.iter().zip(&self.labels) {
            let k = usize::from(label == Label::Negative);
            for (j, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    sums[k][j] += v;
                    counts[k][j] += 1;
                }
            }
        }
        let mean = |k: usize| -> Vec<f64> {
            (0..d)
                .map(|j| {
                    if counts[k][j] == 0 {
                        f64::NAN
                    } else {
                        sums[k][j] / counts[k][j] as f64
                    }
                })
                .collect()
        };
        (mean(0), mean(1))
    }

    pub(crate) fn into_parts(self) -> (FeatureSchema, Vec<Vec<Option<f64>>>, Vec<Label>, ClassNames) {
        (self.schema, self.values, self.labels, self.class_names)
    }
}

pub(crate) fn require_both_classes(labels: &[Label]) -> Result<()> {
    for class in [Label::Positive, Label::Negative] {
        if !labels.contains(&class) {
            return Err(Error::MissingClass(class));
        }
    }
    Ok(())
}

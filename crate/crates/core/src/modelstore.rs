//! The model bundle: preprocessing parameters, a fitted classifier and the
//! feature schema, serialized as canonical JSON.
//!
//! Canonical means object keys in sorted order, no insignificant whitespace
//! and every number in its shortest round-trip decimal form, so that
//! `encode(decode(encode(b))) == encode(b)` byte for byte and a browser can
//! evaluate the same file without any custom decoding.
//!
//! ```
//! use triage::dataio::{Dataset, FeatureSchema, Label};
//! use triage::eval::{refit, Hyperparams, TrainSpec};
//! use triage::modelstore::{decode_bundle, encode_bundle};
//!
//! let data = Dataset::from_dense(
//!     FeatureSchema::generic(1),
//!     vec![vec![-1.0], vec![1.0]],
//!     vec![Label::Negative, Label::Positive],
//! )?;
//! let bundle = refit(&data, &TrainSpec::new(Hyperparams::linear_svm(1000.0)), "toy")?;
//! let bytes = encode_bundle(&bundle)?;
//! let text = std::str::from_utf8(&bytes).unwrap();
//! assert!(text.contains(r#""dual_coefs":[-0.5,0.5]"#));
//! assert_eq!(encode_bundle(&decode_bundle(&bytes)?)?, bytes);
//! # Ok::<(), triage::Error>(())
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cart::{tree_importance, TreeModel};
use crate::dataio::{ClassNames, FeatureSchema, Label, PreprocessParams};
use crate::error::{Error, Result};
use crate::eval::{Family, Hyperparams, Weighting};
use crate::forest::ForestModel;
use crate::svm::{svm_importance, SvmModel};

/// Version written by [`encode_bundle`] and the only one
/// [`decode_bundle`] accepts.
pub const FORMAT_VERSION: u64 = 1;

/// A fitted classifier of any family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Classifier {
    Svm(SvmModel),
    Tree(TreeModel),
    Forest(ForestModel),
}

const CLASSIFIER_TAGS: [&str; 3] = ["svm", "tree", "forest"];

impl Classifier {
    pub fn n_features(&self) -> usize {
        match self {
            Classifier::Svm(m) => m.n_features,
            Classifier::Tree(m) => m.n_features,
            Classifier::Forest(m) => m.n_features(),
        }
    }

    /// Label and score of a standardized row.
    pub fn predict(&self, x: &[f64]) -> Result<(Label, f64)> {
        match self {
            Classifier::Svm(m) => m.predict(x),
            Classifier::Tree(m) => m.predict(x),
            Classifier::Forest(m) => m.predict(x),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Classifier::Svm(m) => m.validate(),
            Classifier::Tree(m) => m.validate(),
            Classifier::Forest(m) => m.validate(),
        }
    }

    pub(crate) fn set_schema_digest(&mut self, digest: &str) {
        match self {
            Classifier::Svm(m) => m.schema_digest = digest.to_string(),
            Classifier::Tree(m) => m.schema_digest = digest.to_string(),
            Classifier::Forest(m) => {
                m.schema_digest = digest.to_string();
                for t in &mut m.trees {
                    t.schema_digest = digest.to_string();
                }
            }
        }
    }

    fn schema_digest(&self) -> &str {
        match self {
            Classifier::Svm(m) => &m.schema_digest,
            Classifier::Tree(m) => &m.schema_digest,
            Classifier::Forest(m) => &m.schema_digest,
        }
    }

    /// Per-feature importance, summing to 1 (or all zero for a model that
    /// never uses a feature). Defined for linear SVMs and single trees.
    pub fn importance(&self) -> Result<Vec<f64>> {
        match self {
            Classifier::Svm(m) => svm_importance(m),
            Classifier::Tree(m) => Ok(tree_importance(m)),
            Classifier::Forest(_) => Err(Error::Unsupported(
                "feature importance is reported for linear SVMs and decision trees only".into(),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    /// Name of the classification task, e.g. `primary`.
    pub task: String,
    /// Unix seconds of the refit, when stamped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trained_at: Option<u64>,
    pub family: Family,
    /// Hyperparameters with the class weights actually used in the refit.
    pub hyperparameters: Hyperparams,
    pub weighting: Weighting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub class_names: ClassNames,
    /// Raw (unstandardized) per-class means of the training data; `None`
    /// where a class had no observation of the feature.
    pub positive_means: Vec<Option<f64>>,
    pub negative_means: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u64,
    pub schema: FeatureSchema,
    pub preprocess: PreprocessParams,
    pub classifier: Classifier,
    pub metadata: BundleMetadata,
}

/// Which class has the larger mean of a feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Higher in the positive class.
    Higher,
    Lower,
    /// Equal means, or a class without observations.
    Undetermined,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Higher => "higher",
            Direction::Lower => "lower",
            Direction::Undetermined => "n/a",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    /// Position in the schema.
    pub index: usize,
    pub feature: String,
    pub score: f64,
    /// 1 is the most important; equal scores rank in schema order.
    pub rank: usize,
    pub direction: Direction,
}

impl ModelBundle {
    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    /// Checks every cross-field invariant: one dimension shared by schema,
    /// preprocessing, classifier and metadata; a matching schema digest;
    /// finite parameters.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::BundleVersion {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        self.schema.validate()?;
        let d = self.schema.len();
        let dims = [
            ("preprocess", self.preprocess.dim()),
            ("preprocess means", self.preprocess.standardize_means.len()),
            ("preprocess scales", self.preprocess.standardize_scales.len()),
            ("classifier", self.classifier.n_features()),
            ("positive means", self.metadata.positive_means.len()),
            ("negative means", self.metadata.negative_means.len()),
        ];
        for (what, n) in dims {
            if n != d {
                return Err(Error::BundleDimension(format!(
                    "{d}-feature schema but {n}-dimensional {what}"
                )));
            }
        }
        self.preprocess
            .validate()
            .map_err(|e| Error::InvalidBundle(e.to_string()))?;
        self.classifier.validate().map_err(|e| match e {
            Error::DimensionMismatch { expected, found } => {
                Error::BundleDimension(format!("classifier expects {expected} values, found {found}"))
            }
            Error::BundleDimension(_) | Error::InvalidBundle(_) => e,
            other => Error::InvalidBundle(other.to_string()),
        })?;
        let digest = self.classifier.schema_digest();
        if !digest.is_empty() && digest != self.schema.digest() {
            return Err(Error::InvalidBundle(
                "classifier was trained on a different feature schema".into(),
            ));
        }
        if self.metadata.family != self.metadata.hyperparameters.family() {
            return Err(Error::InvalidBundle("metadata family disagrees with its hyperparameters".into()));
        }
        Ok(())
    }

    /// Imputes, standardizes and classifies one raw row (`None` = missing).
    pub fn predict_row(&self, row: &[Option<f64>]) -> Result<(Label, f64)> {
        let x = self.preprocess.transform_row(row)?;
        self.classifier.predict(&x)
    }

    pub fn predict_rows(&self, rows: &[Vec<Option<f64>>]) -> Result<Vec<(Label, f64)>> {
        rows.iter().map(|r| self.predict_row(r)).collect()
    }

    /// Features ranked by importance, with the direction of the class-mean
    /// difference. Errors for models without per-feature importance (RBF
    /// SVMs, forests).
    pub fn importance(&self) -> Result<Vec<ImportanceEntry>> {
        let scores = self.classifier.importance()?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut rank = vec![0; scores.len()];
        for (r, &j) in order.iter().enumerate() {
            rank[j] = r + 1;
        }
        Ok((0..scores.len())
            .map(|j| {
                let direction = match (self.metadata.positive_means[j], self.metadata.negative_means[j]) {
                    (Some(p), Some(n)) if p > n => Direction::Higher,
                    (Some(p), Some(n)) if p < n => Direction::Lower,
                    _ => Direction::Undetermined,
                };
                ImportanceEntry {
                    index: j,
                    feature: self.schema.features[j].name.clone(),
                    score: scores[j],
                    rank: rank[j],
                    direction,
                }
            })
            .collect())
    }
}

/// Canonical JSON encoding of a valid bundle.
pub fn encode_bundle(b: &ModelBundle) -> Result<Vec<u8>> {
    b.validate()?;
    // `Value` objects are ordered maps, so keys come out sorted
    let value = serde_json::to_value(b)?;
    Ok(serde_json::to_vec(&value)?)
}

/// Parses and validates a bundle. Malformed JSON, an unsupported version,
/// an unknown classifier tag and inconsistent dimensions are distinct errors.
pub fn decode_bundle(bytes: &[u8]) -> Result<ModelBundle> {
    let value: Value = serde_json::from_slice(bytes)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::InvalidBundle("top level must be a JSON object".into()))?;
    let version = obj.get("format_version").and_then(Value::as_u64).unwrap_or(0);
    if version != FORMAT_VERSION {
        return Err(Error::BundleVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if let Some(tag) = obj.get("classifier").and_then(|c| c.get("type")) {
        match tag.as_str() {
            Some(t) if CLASSIFIER_TAGS.contains(&t) => {}
            _ => return Err(Error::UnknownClassifier(tag.to_string().trim_matches('"').to_string())),
        }
    }
    let bundle: ModelBundle = serde_json::from_value(value).map_err(|e| Error::InvalidBundle(e.to_string()))?;
    bundle.validate()?;
    Ok(bundle)
}

pub fn load_bundle(path: impl AsRef<std::path::Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bundle(&bytes)
}

pub fn save_bundle(b: &ModelBundle, path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_bundle(b)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

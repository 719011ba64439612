//! Leave-one-out cross-validation, metrics, class weighting, the two-round
//! grid search and the final refit.
//!
//! Every fold fits its own imputation/standardization parameters on the
//! `N - 1` training rows, so the held-out row never influences what it is
//! scored with. Confusion counts are pooled over all `N` one-row folds.
//!
//! Grid search batches work that the model families make redundant:
//!
//! - SVM: one pairwise-distance (or dot-product) matrix per fold serves every
//!   `(C, gamma)` point, and one Gram matrix per fold serves every `C`;
//! - trees: a tree cut at depth `k` is the tree fitted with `max_depth = k`,
//!   so each fold fits once at the deepest candidate;
//! - forests: member `t` depends only on `(seed, t)`, so the first `k` trees
//!   of a large forest are the forest of `k` trees.
//!
//! Each shortcut is bit-identical to fitting the grid point directly, which
//! is what makes a search trace replayable through [`loocv`].

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{fit_tree, Columns, TreeHyperparams, TreeModel};
use crate::dataio::{ClassWeights, Dataset, Label, PreprocessParams};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, fit_forest_columns, ForestHyperparams, ForestModel, MaxFeatures};
use crate::modelstore::{BundleMetadata, Classifier, ModelBundle, FORMAT_VERSION};
use crate::svm::{
    fit_svm, gram_from_stats, pair_stat, pair_stats, solve_gram, KernelSpec, SolverOptions, SvmHyperparams, SvmModel,
    DEFAULT_MAX_PASSES, DEFAULT_TOL, SUPPORT_EPS,
};

// ---------------------------------------------------------------------------
// metrics

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
}

impl ConfusionCounts {
    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Positive, Label::Positive) => self.tp += 1,
            (Label::Positive, Label::Negative) => self.fn_ += 1,
            (Label::Negative, Label::Negative) => self.tn += 1,
            (Label::Negative, Label::Positive) => self.fp += 1,
        }
    }

    pub fn tally(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut c = ConfusionCounts::default();
        for (t, p) in pairs {
            c.record(t, p);
        }
        c
    }

    pub fn actual_positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn actual_negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn total(&self) -> u64 {
        self.actual_positives() + self.actual_negatives()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub balanced_accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    /// `None` when nothing was predicted positive.
    pub precision: Option<f64>,
}

/// Mean of the two class recalls.
pub fn balanced_accuracy(sensitivity: f64, specificity: f64) -> f64 {
    (sensitivity + specificity) / 2.0
}

pub fn compute_metrics(c: &ConfusionCounts) -> Result<MetricReport> {
    if c.actual_positives() == 0 {
        return Err(Error::MissingClass(Label::Positive));
    }
    if c.actual_negatives() == 0 {
        return Err(Error::MissingClass(Label::Negative));
    }
    let sensitivity = c.tp as f64 / c.actual_positives() as f64;
    let specificity = c.tn as f64 / c.actual_negatives() as f64;
    let precision = (c.tp + c.fp > 0).then(|| c.tp as f64 / (c.tp + c.fp) as f64);
    Ok(MetricReport {
        balanced_accuracy: balanced_accuracy(sensitivity, specificity),
        sensitivity,
        specificity,
        precision,
    })
}

/// `N / (2 N_c)` per class.
pub fn class_weights(labels: &[Label]) -> Result<ClassWeights> {
    ClassWeights::balanced(labels)
}

// ---------------------------------------------------------------------------
// families, hyperparameters, trainers

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    SvmLinear,
    SvmRbf,
    Tree,
    Forest,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::SvmLinear, Family::SvmRbf, Family::Tree, Family::Forest];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::SvmLinear => "svm-linear",
            Family::SvmRbf => "svm-rbf",
            Family::Tree => "tree",
            Family::Forest => "forest",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::InvalidHyperparameter(format!("unknown family '{s}'")))
    }
}

/// Hyperparameters of one classifier configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Hyperparams {
    Svm(SvmHyperparams),
    Tree(TreeHyperparams),
    Forest(ForestHyperparams),
}

impl Hyperparams {
    pub fn linear_svm(c: f64) -> Self {
        Hyperparams::Svm(SvmHyperparams::new(c, KernelSpec::Linear))
    }

    pub fn rbf_svm(c: f64, gamma: f64) -> Self {
        Hyperparams::Svm(SvmHyperparams::new(c, KernelSpec::Rbf { gamma }))
    }

    pub fn tree(max_depth: usize) -> Self {
        Hyperparams::Tree(TreeHyperparams::with_depth(max_depth))
    }

    pub fn forest(n_tree: usize, max_features: MaxFeatures, max_depth: usize, seed: u64) -> Self {
        Hyperparams::Forest(ForestHyperparams {
            n_tree,
            max_features,
            tree: TreeHyperparams::with_depth(max_depth),
            seed,
            bootstrap: true,
        })
    }

    pub fn family(&self) -> Family {
        match self {
            Hyperparams::Svm(h) => match h.kernel {
                KernelSpec::Linear => Family::SvmLinear,
                KernelSpec::Rbf { .. } => Family::SvmRbf,
            },
            Hyperparams::Tree(_) => Family::Tree,
            Hyperparams::Forest(_) => Family::Forest,
        }
    }

    pub fn class_weights(&self) -> ClassWeights {
        match self {
            Hyperparams::Svm(h) => h.class_weights,
            Hyperparams::Tree(h) => h.class_weights,
            Hyperparams::Forest(h) => h.tree.class_weights,
        }
    }

    pub fn with_class_weights(mut self, w: ClassWeights) -> Self {
        match &mut self {
            Hyperparams::Svm(h) => h.class_weights = w,
            Hyperparams::Tree(h) => h.class_weights = w,
            Hyperparams::Forest(h) => h.tree.class_weights = w,
        }
        self
    }

    /// Forest seed; other families are deterministic without one.
    pub fn seed(&self) -> Option<u64> {
        match self {
            Hyperparams::Forest(h) => Some(h.seed),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Hyperparams::Svm(h) => h.validate(),
            Hyperparams::Tree(h) => h.validate(),
            Hyperparams::Forest(h) => h.validate(),
        }
    }

    /// Lexicographic tie-break key: smaller is preferred.
    fn tie_key(&self) -> [f64; 3] {
        match self {
            Hyperparams::Svm(h) => match h.kernel {
                KernelSpec::Linear => [h.c, 0.0, 0.0],
                KernelSpec::Rbf { gamma } => [h.c, gamma, 0.0],
            },
            Hyperparams::Tree(h) => [h.max_depth as f64, 0.0, 0.0],
            Hyperparams::Forest(h) => {
                let mf = MaxFeatures::ALL.iter().position(|m| *m == h.max_features).unwrap_or(0);
                [h.n_tree as f64, mf as f64, h.tree.max_depth as f64]
            }
        }
    }
}

impl fmt::Display for Hyperparams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hyperparams::Svm(h) => match h.kernel {
                KernelSpec::Linear => write!(f, "C={}", h.c),
                KernelSpec::Rbf { gamma } => write!(f, "C={} gamma={}", h.c, gamma),
            },
            Hyperparams::Tree(h) => write!(f, "max_depth={}", h.max_depth),
            Hyperparams::Forest(h) => write!(
                f,
                "n_tree={} max_features={} max_depth={}",
                h.n_tree,
                h.max_features.as_str(),
                h.tree.max_depth
            ),
        }
    }
}

/// How per-class sample weights are chosen for a fit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Use the weights carried by the hyperparameters.
    Fixed,
    /// Recompute `N / (2 N_c)` from the labels of every training set.
    #[default]
    Balanced,
}

/// Anything that can score a standardized row.
pub trait Predict {
    /// Label and real-valued score; a non-negative score is positive.
    fn predict(&self, x: &[f64]) -> Result<(Label, f64)>;
}

impl Predict for SvmModel {
    fn predict(&self, x: &[f64]) -> Result<(Label, f64)> {
        SvmModel::predict(self, x)
    }
}

impl Predict for TreeModel {
    fn predict(&self, x: &[f64]) -> Result<(Label, f64)> {
        TreeModel::predict(self, x)
    }
}

impl Predict for ForestModel {
    fn predict(&self, x: &[f64]) -> Result<(Label, f64)> {
        ForestModel::predict(self, x)
    }
}

impl Predict for Classifier {
    fn predict(&self, x: &[f64]) -> Result<(Label, f64)> {
        Classifier::predict(self, x)
    }
}

/// A classifier-fitting procedure: a pure function of the training rows.
pub trait Trainer: Sync {
    type Model: Predict;
    fn fit(&self, x: &[Vec<f64>], y: &[Label]) -> Result<Self::Model>;
}

/// Hyperparameters plus the class-weighting policy: everything needed to
/// fit one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub hyperparams: Hyperparams,
    pub weighting: Weighting,
}

impl TrainSpec {
    /// Balanced class weights, as used throughout the experiments.
    pub fn new(hyperparams: Hyperparams) -> Self {
        TrainSpec {
            hyperparams,
            weighting: Weighting::Balanced,
        }
    }

    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.weighting = weighting;
        self
    }

    /// Hyperparameters with the class weights this training set gets.
    pub fn resolve(&self, y: &[Label]) -> Result<Hyperparams> {
        match self.weighting {
            Weighting::Fixed => Ok(self.hyperparams.clone()),
            Weighting::Balanced => Ok(self.hyperparams.clone().with_class_weights(class_weights(y)?)),
        }
    }
}

impl Trainer for TrainSpec {
    type Model = Classifier;

    fn fit(&self, x: &[Vec<f64>], y: &[Label]) -> Result<Classifier> {
        Ok(match self.resolve(y)? {
            Hyperparams::Svm(h) => Classifier::Svm(fit_svm(x, y, &h)?),
            Hyperparams::Tree(h) => Classifier::Tree(fit_tree(x, y, &h)?),
            Hyperparams::Forest(h) => Classifier::Forest(fit_forest(x, y, &h)?),
        })
    }
}

// ---------------------------------------------------------------------------
// LOOCV

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPrediction {
    /// Row index of the held-out sample.
    pub index: usize,
    pub truth: Label,
    pub predicted: Label,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<FoldPrediction>,
    pub counts: ConfusionCounts,
    pub metrics: MetricReport,
    /// Configuration that produced the folds, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<TrainSpec>,
}

impl CvResult {
    fn from_folds(folds: Vec<FoldPrediction>, spec: Option<TrainSpec>) -> Result<Self> {
        let counts = ConfusionCounts::tally(folds.iter().map(|f| (f.truth, f.predicted)));
        let metrics = compute_metrics(&counts)?;
        Ok(CvResult {
            folds,
            counts,
            metrics,
            spec,
        })
    }

    /// One JSON object per fold.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for f in &self.folds {
            out.push_str(&serde_json::to_string(f).expect("fold record serializes"));
            out.push('\n');
        }
        out
    }
}

/// The rows of a dataset other than `held_out`.
fn training_rows(data: &Dataset, held_out: usize) -> Vec<&[Option<f64>]> {
    data.values()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != held_out)
        .map(|(_, r)| r.as_slice())
        .collect()
}

/// Preprocessing parameters of LOOCV fold `held_out`: fitted on every row
/// except that one.
pub fn fold_params(data: &Dataset, held_out: usize) -> Result<PreprocessParams> {
    let rows = training_rows(data, held_out);
    PreprocessParams::fit_rows(&rows, &|j| data.schema().features[j].name.clone(), data.n_features())
}

/// Standardized training rows and held-out row of one fold.
struct Fold {
    index: usize,
    x_train: Vec<Vec<f64>>,
    y_train: Vec<Label>,
    x_test: Vec<f64>,
    y_test: Label,
}

fn make_fold(data: &Dataset, i: usize) -> Result<Fold> {
    let params = fold_params(data, i)?;
    let x_train = training_rows(data, i)
        .into_iter()
        .map(|r| params.transform_row(r))
        .collect::<Result<Vec<_>>>()?;
    let y_train = data
        .labels()
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != i)
        .map(|(_, &l)| l)
        .collect();
    Ok(Fold {
        index: i,
        x_train,
        y_train,
        x_test: params.transform_row(data.row(i))?,
        y_test: data.labels()[i],
    })
}

/// Both classes must survive the removal of any single row.
fn check_loocv(data: &Dataset) -> Result<()> {
    if data.n_samples() < 2 {
        return Err(Error::EmptyDataset);
    }
    for class in [Label::Positive, Label::Negative] {
        if data.count(class) < 2 {
            return Err(Error::MissingClass(class));
        }
    }
    Ok(())
}

fn build_folds(data: &Dataset) -> Result<Vec<Fold>> {
    check_loocv(data)?;
    (0..data.n_samples()).into_par_iter().map(|i| make_fold(data, i)).collect()
}

fn loocv_folds<T: Trainer + ?Sized>(data: &Dataset, trainer: &T) -> Result<Vec<FoldPrediction>> {
    check_loocv(data)?;
    (0..data.n_samples())
        .into_par_iter()
        .map(|i| {
            let fold = make_fold(data, i)?;
            let model = trainer.fit(&fold.x_train, &fold.y_train)?;
            let (predicted, score) = model.predict(&fold.x_test)?;
            Ok(FoldPrediction {
                index: fold.index,
                truth: fold.y_test,
                predicted,
                score,
            })
        })
        .collect()
}

/// Leave-one-out cross-validation of any trainer.
///
/// Requires at least two samples of each class so that every training fold
/// sees both.
pub fn loocv_with<T: Trainer + ?Sized>(data: &Dataset, trainer: &T) -> Result<CvResult> {
    CvResult::from_folds(loocv_folds(data, trainer)?, None)
}

/// Leave-one-out cross-validation of one configuration.
pub fn loocv(data: &Dataset, spec: &TrainSpec) -> Result<CvResult> {
    spec.hyperparams.validate()?;
    CvResult::from_folds(loocv_folds(data, spec)?, Some(spec.clone()))
}

// ---------------------------------------------------------------------------
// grid search

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Round {
    Coarse,
    Fine,
}

/// Candidate values per hyperparameter; the grid is their Cartesian product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum GridSpec {
    /// Linear kernel when `gamma` is `None`.
    Svm { c: Vec<f64>, gamma: Option<Vec<f64>> },
    Tree { max_depth: Vec<usize> },
    Forest {
        n_tree: Vec<usize>,
        max_features: Vec<MaxFeatures>,
        max_depth: Vec<usize>,
    },
}

/// `2^-10, 2^-9, ..., 2^10`.
pub fn exponential_range() -> Vec<f64> {
    (-10..=10).map(|k| 2f64.powi(k)).collect()
}

/// `n` evenly spaced values from `lo` to `hi`, both included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

/// Points per hyperparameter in the refinement round.
pub const FINE_POINTS: usize = 20;

impl GridSpec {
    /// The first-round grid of a family.
    pub fn coarse(family: Family) -> Self {
        match family {
            Family::SvmLinear => GridSpec::Svm {
                c: exponential_range(),
                gamma: None,
            },
            Family::SvmRbf => GridSpec::Svm {
                c: exponential_range(),
                gamma: Some(exponential_range()),
            },
            Family::Tree => GridSpec::Tree {
                max_depth: (1..=10).collect(),
            },
            Family::Forest => GridSpec::Forest {
                n_tree: vec![10, 20, 50, 100],
                max_features: MaxFeatures::ALL.to_vec(),
                max_depth: (1..=10).collect(),
            },
        }
    }

    /// Second-round grid around a first-round winner: `FINE_POINTS` values
    /// spanning `[v/2, 2v]` for every continuous hyperparameter. Discrete
    /// families have no second round.
    pub fn fine_around(best: &Hyperparams) -> Option<Self> {
        let around = |v: f64| linspace(v / 2.0, v * 2.0, FINE_POINTS);
        match best {
            Hyperparams::Svm(h) => Some(GridSpec::Svm {
                c: around(h.c),
                gamma: match h.kernel {
                    KernelSpec::Linear => None,
                    KernelSpec::Rbf { gamma } => Some(around(gamma)),
                },
            }),
            _ => None,
        }
    }

    pub fn family(&self) -> Family {
        match self {
            GridSpec::Svm { gamma: None, .. } => Family::SvmLinear,
            GridSpec::Svm { gamma: Some(_), .. } => Family::SvmRbf,
            GridSpec::Tree { .. } => Family::Tree,
            GridSpec::Forest { .. } => Family::Forest,
        }
    }

    /// Size of the Cartesian product.
    pub fn len(&self) -> usize {
        match self {
            GridSpec::Svm { c, gamma } => c.len() * gamma.as_ref().map_or(1, Vec::len),
            GridSpec::Tree { max_depth } => max_depth.len(),
            GridSpec::Forest {
                n_tree,
                max_features,
                max_depth,
            } => n_tree.len() * max_features.len() * max_depth.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let empty = match self {
            GridSpec::Svm { c, gamma } => c.is_empty() || gamma.as_ref().is_some_and(Vec::is_empty),
            GridSpec::Tree { max_depth } => max_depth.is_empty(),
            GridSpec::Forest {
                n_tree,
                max_features,
                max_depth,
            } => n_tree.is_empty() || max_features.is_empty() || max_depth.is_empty(),
        };
        if empty {
            return Err(Error::InvalidHyperparameter("grid has an empty candidate list".into()));
        }
        Ok(())
    }

    /// Grid points in evaluation order (outer to inner: gamma then C;
    /// max_features, n_tree, max_depth).
    pub fn points(&self, options: &SearchOptions) -> Vec<Hyperparams> {
        let svm = |c: f64, kernel: KernelSpec| {
            Hyperparams::Svm(SvmHyperparams {
                c,
                kernel,
                class_weights: ClassWeights::UNIT,
                tol: options.tol,
                max_passes: options.max_passes,
            })
        };
        match self {
            GridSpec::Svm { c, gamma: None } => c.iter().map(|&c| svm(c, KernelSpec::Linear)).collect(),
            GridSpec::Svm { c, gamma: Some(g) } => g
                .iter()
                .flat_map(|&gamma| c.iter().map(move |&c| (c, gamma)))
                .map(|(c, gamma)| svm(c, KernelSpec::Rbf { gamma }))
                .collect(),
            GridSpec::Tree { max_depth } => max_depth.iter().map(|&d| Hyperparams::tree(d)).collect(),
            GridSpec::Forest {
                n_tree,
                max_features,
                max_depth,
            } => {
                let mut out = Vec::with_capacity(self.len());
                for &mf in max_features {
                    for &n in n_tree {
                        for &d in max_depth {
                            out.push(Hyperparams::forest(n, mf, d, options.seed));
                        }
                    }
                }
                out
            }
        }
    }
}

/// Settings shared by every grid point of a search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub weighting: Weighting,
    /// Forest seed, reused by every fold of every grid point.
    pub seed: u64,
    pub tol: f64,
    pub max_passes: usize,
    /// Run the refinement round (SVM families only).
    pub refine: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            weighting: Weighting::Balanced,
            seed: 0,
            tol: DEFAULT_TOL,
            max_passes: DEFAULT_MAX_PASSES,
            refine: true,
        }
    }
}

/// One evaluated grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub round: Round,
    /// Position within its round.
    pub index: usize,
    pub spec: TrainSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub counts: ConfusionCounts,
    pub metrics: MetricReport,
}

/// Append-only log of every LOOCV evaluation of a search.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchTrace {
    records: Vec<TraceRecord>,
}

impl SearchTrace {
    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, round: Round) -> usize {
        self.records.iter().filter(|r| r.round == round).count()
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_json_lines(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<TraceRecord>, _>>()?;
        Ok(SearchTrace { records })
    }
}

/// Re-runs the LOOCV evaluation behind a trace record.
pub fn replay(data: &Dataset, record: &TraceRecord) -> Result<CvResult> {
    loocv(data, &record.spec)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub best: TrainSpec,
    pub best_cv: CvResult,
    pub trace: SearchTrace,
}

/// Per grid point, the fold predictions in fold order.
type PointFolds = Vec<Vec<FoldPrediction>>;

/// Evaluates every point of `grid` by LOOCV.
fn evaluate_grid(folds: &[Fold], points: &[Hyperparams], weighting: Weighting) -> Result<PointFolds> {
    let per_fold: Vec<Vec<(Label, f64)>> = folds
        .par_iter()
        .map(|fold| evaluate_fold(fold, points, weighting))
        .collect::<Result<_>>()?;
    Ok((0..points.len())
        .map(|p| {
            folds
                .iter()
                .zip(&per_fold)
                .map(|(fold, preds)| FoldPrediction {
                    index: fold.index,
                    truth: fold.y_test,
                    predicted: preds[p].0,
                    score: preds[p].1,
                })
                .collect()
        })
        .collect())
}

/// Predictions of one fold at every grid point, sharing work between
/// points where the result is provably unchanged.
fn evaluate_fold(fold: &Fold, points: &[Hyperparams], weighting: Weighting) -> Result<Vec<(Label, f64)>> {
    let resolved: Vec<Hyperparams> = match weighting {
        Weighting::Balanced => {
            let w = class_weights(&fold.y_train)?;
            points.iter().map(|hp| hp.clone().with_class_weights(w)).collect()
        }
        Weighting::Fixed => points.to_vec(),
    };
    for hp in &resolved {
        hp.validate()?;
    }
    let mut out = vec![(Label::Positive, 0.0); points.len()];
    let mut done = vec![false; points.len()];
    // SVM pair statistics (dot products or squared distances) of the fold
    let mut stats: Option<(bool, Vec<f64>, Vec<f64>)> = None;

    for p in 0..resolved.len() {
        if done[p] {
            continue;
        }
        match &resolved[p] {
            Hyperparams::Svm(h) => {
                let rbf = matches!(h.kernel, KernelSpec::Rbf { .. });
                if stats.as_ref().map(|s| s.0) != Some(rbf) {
                    let train = pair_stats(&fold.x_train, rbf);
                    let test = fold.x_train.iter().map(|r| pair_stat(r, &fold.x_test, rbf)).collect();
                    stats = Some((rbf, train, test));
                }
                let (_, train, test) = stats.as_ref().expect("just filled");
                let gram = gram_from_stats(train, &h.kernel);
                for q in p..resolved.len() {
                    let hq = match &resolved[q] {
                        Hyperparams::Svm(hq) if hq.kernel == h.kernel && !done[q] => hq,
                        _ => continue,
                    };
                    let opts = SolverOptions {
                        tol: hq.tol,
                        max_passes: hq.max_passes,
                        trace: false,
                    };
                    let state = solve_gram(&gram, &fold.y_train, &hq.costs(&fold.y_train), opts);
                    // same expansion, in the same order, as SvmModel::decision_value
                    let score = state
                        .alphas
                        .iter()
                        .zip(&fold.y_train)
                        .zip(test)
                        .filter(|((&a, _), _)| a > SUPPORT_EPS)
                        .map(|((&a, l), &s)| (a * l.sign()) * hq.kernel.from_stat(s))
                        .sum::<f64>()
                        + state.bias;
                    out[q] = (Label::from_score(score), score);
                    done[q] = true;
                }
            }
            Hyperparams::Tree(h) => {
                let matching: Vec<usize> = (p..resolved.len())
                    .filter(|&q| !done[q] && matches!(&resolved[q], Hyperparams::Tree(t) if same_tree_settings(t, h)))
                    .collect();
                let depth_of = |q: usize| match &resolved[q] {
                    Hyperparams::Tree(t) => t.max_depth,
                    _ => unreachable!("filtered to trees"),
                };
                let deepest = matching.iter().map(|&q| depth_of(q)).max().unwrap_or(h.max_depth);
                let hp = TreeHyperparams {
                    max_depth: deepest,
                    ..h.clone()
                };
                let model = fit_tree(&fold.x_train, &fold.y_train, &hp)?;
                for q in matching {
                    out[q] = model.predict_at_depth(&fold.x_test, depth_of(q))?;
                    done[q] = true;
                }
            }
            Hyperparams::Forest(h) => {
                let matching: Vec<(usize, &ForestHyperparams)> = (p..resolved.len())
                    .filter(|&q| !done[q])
                    .filter_map(|q| match &resolved[q] {
                        Hyperparams::Forest(f)
                            if f.max_features == h.max_features
                                && f.seed == h.seed
                                && f.bootstrap == h.bootstrap
                                && same_tree_settings(&f.tree, &h.tree) =>
                        {
                            Some((q, f))
                        }
                        _ => None,
                    })
                    .collect();
                let big = ForestHyperparams {
                    n_tree: matching.iter().map(|(_, f)| f.n_tree).max().unwrap_or(h.n_tree),
                    tree: TreeHyperparams {
                        max_depth: matching.iter().map(|(_, f)| f.tree.max_depth).max().unwrap_or(1),
                        ..h.tree.clone()
                    },
                    ..h.clone()
                };
                let cols = Columns::new(&fold.x_train)?;
                let model = fit_forest_columns(&cols, &fold.y_train, &big)?;
                for (q, f) in matching {
                    out[q] = model.predict_prefix(&fold.x_test, f.n_tree, f.tree.max_depth)?;
                    done[q] = true;
                }
            }
        }
    }
    Ok(out)
}

fn same_tree_settings(a: &TreeHyperparams, b: &TreeHyperparams) -> bool {
    a.min_impurity == b.min_impurity && a.min_pool == b.min_pool && a.class_weights == b.class_weights
}

/// Evaluates every point of a grid by LOOCV, appending one trace record per
/// point. Returns the per-point results in grid order.
pub fn evaluate_round(
    data: &Dataset,
    grid: &GridSpec,
    round: Round,
    options: &SearchOptions,
    trace: &mut SearchTrace,
) -> Result<Vec<CvResult>> {
    grid.validate()?;
    let folds = build_folds(data)?;
    evaluate_round_folds(&folds, grid, round, options, trace)
}

fn evaluate_round_folds(
    folds: &[Fold],
    grid: &GridSpec,
    round: Round,
    options: &SearchOptions,
    trace: &mut SearchTrace,
) -> Result<Vec<CvResult>> {
    grid.validate()?;
    let points = grid.points(options);
    let per_point = evaluate_grid(folds, &points, options.weighting)?;
    let mut results = Vec::with_capacity(points.len());
    for (index, (hp, preds)) in points.into_iter().zip(per_point).enumerate() {
        let spec = TrainSpec {
            hyperparams: hp,
            weighting: options.weighting,
        };
        let cv = CvResult::from_folds(preds, Some(spec.clone()))?;
        trace.push(TraceRecord {
            round,
            index,
            seed: spec.hyperparams.seed(),
            spec,
            counts: cv.counts,
            metrics: cv.metrics,
        });
        results.push(cv);
    }
    Ok(results)
}

/// Index of the winner: highest balanced accuracy, ties to the smallest
/// tie key (smaller C, then smaller gamma; smaller trees and forests).
fn best_index(results: &[CvResult]) -> usize {
    let key = |r: &CvResult| r.spec.as_ref().map(|s| s.hyperparams.tie_key()).unwrap_or([0.0; 3]);
    let mut best = 0;
    for i in 1..results.len() {
        let (a, b) = (&results[i], &results[best]);
        let better = a.metrics.balanced_accuracy > b.metrics.balanced_accuracy
            || (a.metrics.balanced_accuracy == b.metrics.balanced_accuracy
                && key(a).partial_cmp(&key(b)) == Some(std::cmp::Ordering::Less));
        if better {
            best = i;
        }
    }
    best
}

/// Two-round grid search: the coarse grid, then (for SVMs, if enabled) the
/// fine grid around the coarse winner. The overall best is taken over both
/// rounds.
pub fn grid_search(data: &Dataset, coarse: &GridSpec, options: &SearchOptions) -> Result<SearchOutcome> {
    coarse.validate()?;
    let folds = build_folds(data)?;
    let mut trace = SearchTrace::default();
    let mut results = evaluate_round_folds(&folds, coarse, Round::Coarse, options, &mut trace)?;
    if options.refine {
        let coarse_best = &results[best_index(&results)];
        let hp = &coarse_best.spec.as_ref().expect("grid results carry their spec").hyperparams;
        if let Some(fine) = GridSpec::fine_around(hp) {
            let fine_results = evaluate_round_folds(&folds, &fine, Round::Fine, options, &mut trace)?;
            results.extend(fine_results);
        }
    }
    let best_cv = results.swap_remove(best_index(&results));
    Ok(SearchOutcome {
        best: best_cv.spec.clone().expect("grid results carry their spec"),
        best_cv,
        trace,
    })
}

// ---------------------------------------------------------------------------
// refit

/// Fits preprocessing and the classifier on every row and packages the
/// result. `task` names the classification problem; the timestamp is left
/// for the caller to stamp.
pub fn refit(data: &Dataset, spec: &TrainSpec, task: &str) -> Result<ModelBundle> {
    spec.hyperparams.validate()?;
    data.require_both_classes()?;
    let rows: Vec<&[Option<f64>]> = data.values().iter().map(Vec::as_slice).collect();
    let preprocess =
        PreprocessParams::fit_rows(&rows, &|j| data.schema().features[j].name.clone(), data.n_features())?;
    let x = preprocess.transform(data)?;
    let resolved = spec.resolve(data.labels())?;
    let digest = data.schema().digest();
    let mut classifier = spec.fit(&x, data.labels())?;
    classifier.set_schema_digest(&digest);
    let (positive_means, negative_means) = data.class_means();
    let bundle = ModelBundle {
        format_version: FORMAT_VERSION,
        schema: data.schema().clone(),
        preprocess,
        classifier,
        metadata: BundleMetadata {
            task: task.to_string(),
            trained_at: None,
            family: spec.hyperparams.family(),
            hyperparameters: resolved,
            weighting: spec.weighting,
            seed: spec.hyperparams.seed(),
            class_names: data.class_names().clone(),
            positive_means: positive_means.into_iter().map(|v| v.is_finite().then_some(v)).collect(),
            negative_means: negative_means.into_iter().map(|v| v.is_finite().then_some(v)).collect(),
        },
    };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{gen_synthetic, FeatureSchema, SyntheticSpec};
    use Label::{Negative as N, Positive as P};

    #[test]
    fn metric_examples() {
        let m = compute_metrics(&ConfusionCounts { tp: 5, fn_: 0, tn: 5, fp: 0 }).unwrap();
        assert_eq!(
            m,
            MetricReport {
                balanced_accuracy: 1.0,
                sensitivity: 1.0,
                specificity: 1.0,
                precision: Some(1.0)
            }
        );
        let m = compute_metrics(&ConfusionCounts { tp: 7, fn_: 1, tn: 4, fp: 1 }).unwrap();
        assert_eq!(m.sensitivity, 0.875);
        assert_eq!(m.specificity, 0.8);
        assert_eq!(m.precision, Some(0.875));
        assert_eq!(m.balanced_accuracy, 0.8375);
    }

    #[test]
    fn precision_undefined_without_positive_predictions() {
        let m = compute_metrics(&ConfusionCounts { tp: 0, fn_: 3, tn: 4, fp: 0 }).unwrap();
        assert_eq!(m.precision, None);
        assert_eq!(m.balanced_accuracy, 0.5);
    }

    #[test]
    fn metrics_need_both_classes() {
        assert!(matches!(
            compute_metrics(&ConfusionCounts { tp: 0, fn_: 0, tn: 4, fp: 1 }),
            Err(Error::MissingClass(P))
        ));
        assert!(matches!(
            compute_metrics(&ConfusionCounts { tp: 2, fn_: 1, tn: 0, fp: 0 }),
            Err(Error::MissingClass(N))
        ));
    }

    #[test]
    fn class_weight_examples() {
        let mut y = vec![P; 208];
        y.extend(vec![N; 86]);
        let w = class_weights(&y).unwrap();
        assert!((w.positive - 294.0 / 416.0).abs() < 1e-15);
        assert!((w.negative - 294.0 / 172.0).abs() < 1e-15);
        assert!((w.positive - 0.7067).abs() < 1e-4 && (w.negative - 1.7093).abs() < 1e-4);
        assert!((w.positive * 208.0 - w.negative * 86.0).abs() < 1e-12);
        let even: Vec<Label> = (0..100).map(|i| if i < 50 { P } else { N }).collect();
        assert_eq!(class_weights(&even).unwrap(), ClassWeights::UNIT);
    }

    #[test]
    fn ranges() {
        let r = exponential_range();
        assert_eq!(r.len(), 21);
        assert_eq!((r[0], r[10], r[20]), (1.0 / 1024.0, 1.0, 1024.0));
        let l = linspace(16.0, 64.0, 20);
        assert_eq!((l.len(), l[0], l[19]), (20, 16.0, 64.0));
        assert!(l.windows(2).all(|w| ((w[1] - w[0]) - 48.0 / 19.0).abs() < 1e-12));
    }

    #[test]
    fn grid_sizes() {
        let o = SearchOptions::default();
        let sizes: Vec<usize> = Family::ALL.iter().map(|&f| GridSpec::coarse(f).points(&o).len()).collect();
        assert_eq!(sizes, vec![21, 441, 10, 120]);
        let fine = GridSpec::fine_around(&Hyperparams::rbf_svm(32.0, 0.004)).unwrap();
        assert_eq!(fine.points(&o).len(), 400);
        assert_eq!(GridSpec::fine_around(&Hyperparams::linear_svm(1.0)).unwrap().len(), 20);
        assert!(GridSpec::fine_around(&Hyperparams::tree(3)).is_none());
        let empty = GridSpec::Tree { max_depth: vec![] };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.as_str().parse::<Family>().unwrap(), f);
            assert_eq!(serde_json::to_string(&f).unwrap(), format!("\"{f}\""));
        }
        assert!("svm".parse::<Family>().is_err());
    }

    fn toy(n_pos: usize, n_neg: usize, seed: u64) -> Dataset {
        gen_synthetic(&SyntheticSpec::separated(3, n_pos, n_neg, 3.0, 0.1, seed)).unwrap()
    }

    struct Constant;
    impl Predict for Constant {
        fn predict(&self, _: &[f64]) -> Result<(Label, f64)> {
            Ok((P, 1.0))
        }
    }
    impl Trainer for Constant {
        type Model = Constant;
        fn fit(&self, _: &[Vec<f64>], _: &[Label]) -> Result<Constant> {
            Ok(Constant)
        }
    }

    #[test]
    fn constant_predictor_scores_one_half() {
        let cv = loocv_with(&toy(5, 5, 1), &Constant).unwrap();
        assert_eq!(cv.folds.len(), 10);
        assert_eq!(cv.metrics.balanced_accuracy, 0.5);
        assert!(cv.folds.iter().enumerate().all(|(i, f)| f.index == i));
    }

    #[test]
    fn loocv_requires_two_per_class() {
        let data = toy(1, 5, 2);
        assert!(matches!(loocv_with(&data, &Constant), Err(Error::MissingClass(P))));
    }

    #[test]
    fn fold_parameters_exclude_the_held_out_row() {
        let data = gen_synthetic(&SyntheticSpec::separated(2, 6, 6, 2.0, 0.0, 3)).unwrap();
        let all = crate::dataio::fit_preprocess(&data).unwrap();
        for i in 0..data.n_samples() {
            assert_ne!(fold_params(&data, i).unwrap(), all);
        }
    }

    #[test]
    fn grid_shortcuts_match_direct_loocv() {
        let data = toy(14, 10, 5);
        let options = SearchOptions { seed: 9, ..Default::default() };
        let grids = [
            GridSpec::Svm { c: vec![0.5, 4.0], gamma: None },
            GridSpec::Svm { c: vec![0.25, 8.0], gamma: Some(vec![0.1, 1.5]) },
            GridSpec::Tree { max_depth: vec![1, 2, 4] },
            GridSpec::Forest { n_tree: vec![3, 7], max_features: vec![MaxFeatures::Sqrt, MaxFeatures::All], max_depth: vec![1, 3] },
        ];
        for grid in grids {
            let mut trace = SearchTrace::default();
            let results = evaluate_round(&data, &grid, Round::Coarse, &options, &mut trace).unwrap();
            assert_eq!(trace.len(), grid.len());
            for (record, cv) in trace.records().iter().zip(&results) {
                let direct = replay(&data, record).unwrap();
                assert_eq!(direct.folds, cv.folds, "{}", record.spec.hyperparams);
                assert_eq!(direct.counts, record.counts);
            }
        }
    }

    #[test]
    fn trace_json_lines_round_trip() {
        let data = toy(6, 6, 8);
        let mut trace = SearchTrace::default();
        evaluate_round(&data, &GridSpec::Tree { max_depth: vec![1, 2] }, Round::Coarse, &SearchOptions::default(), &mut trace).unwrap();
        let text = trace.to_json_lines();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(SearchTrace::from_json_lines(&text).unwrap(), trace);
    }

    #[test]
    fn ties_prefer_smaller_configurations() {
        let data = toy(10, 10, 4);
        let grid = GridSpec::Svm { c: vec![512.0, 1024.0], gamma: None };
        let out = grid_search(&data, &grid, &SearchOptions { refine: false, ..Default::default() }).unwrap();
        let recs = out.trace.records();
        if recs[0].metrics.balanced_accuracy == recs[1].metrics.balanced_accuracy {
            assert_eq!(out.best.hyperparams, recs[0].spec.hyperparams);
        }
        let a = Hyperparams::forest(10, MaxFeatures::All, 3, 0).tie_key();
        let b = Hyperparams::forest(10, MaxFeatures::Sqrt, 1, 0).tie_key();
        assert!(a < b);
    }

    #[test]
    fn search_counts_both_rounds() {
        let data = toy(8, 8, 6);
        let coarse = GridSpec::Svm { c: vec![0.5, 2.0, 8.0], gamma: None };
        let out = grid_search(&data, &coarse, &SearchOptions::default()).unwrap();
        assert_eq!(out.trace.count(Round::Coarse), 3);
        assert_eq!(out.trace.count(Round::Fine), FINE_POINTS);
        let best_ba = out.best_cv.metrics.balanced_accuracy;
        assert!(out.trace.records().iter().all(|r| r.metrics.balanced_accuracy <= best_ba));
    }

    #[test]
    fn refit_two_point_toy() {
        let schema = FeatureSchema::generic(1);
        let data = Dataset::from_dense(schema, vec![vec![-1.0], vec![1.0]], vec![N, P]).unwrap();
        let b = refit(&data, &TrainSpec::new(Hyperparams::linear_svm(1000.0)), "toy").unwrap();
        // standardization of {-1, 1} is the identity
        assert_eq!(b.preprocess.standardize_means, vec![0.0]);
        assert_eq!(b.preprocess.standardize_scales, vec![1.0]);
        match &b.classifier {
            Classifier::Svm(m) => {
                assert_eq!(m.dual_coefs, vec![-0.5, 0.5]);
                assert_eq!(m.bias, 0.0);
                assert_eq!(m.weight_vector, Some(vec![1.0]));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(b.predict_row(&[Some(2.0)]).unwrap(), (P, 2.0));
    }

    #[test]
    fn refit_forest_is_deterministic() {
        let data = toy(12, 9, 7);
        let spec = TrainSpec::new(Hyperparams::forest(5, MaxFeatures::Sqrt, 3, 11));
        assert_eq!(refit(&data, &spec, "t").unwrap(), refit(&data, &spec, "t").unwrap());
    }
}

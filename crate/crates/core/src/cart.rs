//! CART decision trees grown by minimizing expected Gini impurity.
//!
//! A node's pool is the (weighted) set of training samples that satisfy
//! every comparison on the path from the root. At each node the split
//! search tries every offered feature and every midpoint between
//! consecutive distinct values of that feature within the pool, and keeps
//! the `(feature, threshold)` with the smallest
//!
//! ```text
//! E(F, T) = P(F <= T) * gini(F <= T) + P(F > T) * gini(F > T)
//! ```
//!
//! Ties go to the lowest feature id, then the lowest threshold. Samples with
//! `value <= threshold` go left.
//!
//! Weights are always `class_weight(label) * multiplicity`, where the
//! multiplicity is 1 for a plain fit and the bootstrap count inside a
//! forest. Keeping integer counts per class and applying the class weight
//! only when an impurity is evaluated makes every objective a pure function
//! of integer counts, which in turn makes fits bit-for-bit reproducible.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataio::{require_both_classes, ClassWeights, Label};
use crate::error::{check_dim, Error, Result};

/// Splits whose expected impurity does not undercut the node's own impurity
/// by more than this are treated as no improvement.
pub const MIN_IMPURITY_DECREASE: f64 = 1e-12;

/// Candidates whose expected impurities differ by at most this are tied, so
/// rounding in the weighted sum cannot override the tie rule.
pub const SPLIT_TIE_EPS: f64 = 1e-12;

/// Deepest tree supported; node ids are heap indices in a `u64`.
pub const MAX_SUPPORTED_DEPTH: usize = 63;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeHyperparams {
    pub max_depth: usize,
    /// A node whose impurity is at or below this becomes a leaf.
    pub min_impurity: f64,
    /// A node whose pool holds fewer samples than this becomes a leaf.
    pub min_pool: usize,
    pub class_weights: ClassWeights,
}

impl TreeHyperparams {
    /// `max_depth` with the remaining knobs at their usual defaults: no
    /// impurity floor, pools of two or more may split, unit class weights.
    pub fn with_depth(max_depth: usize) -> Self {
        TreeHyperparams {
            max_depth,
            min_impurity: 0.0,
            min_pool: 2,
            class_weights: ClassWeights::UNIT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_SUPPORTED_DEPTH).contains(&self.max_depth) {
            return Err(Error::InvalidHyperparameter(format!(
                "max_depth must be in 1..={MAX_SUPPORTED_DEPTH}, got {}",
                self.max_depth
            )));
        }
        if !(self.min_impurity >= 0.0) {
            return Err(Error::InvalidHyperparameter("min_impurity must be >= 0".into()));
        }
        if self.min_pool == 0 {
            return Err(Error::InvalidHyperparameter("min_pool must be >= 1".into()));
        }
        self.class_weights.validate()
    }
}

/// Sample counts per class (bootstrap multiplicities included).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub positive: u32,
    pub negative: u32,
}

impl ClassCounts {
    fn add(&mut self, label: Label, n: u32) {
        match label {
            Label::Positive => self.positive += n,
            Label::Negative => self.negative += n,
        }
    }

    fn sub(self, other: ClassCounts) -> ClassCounts {
        ClassCounts {
            positive: self.positive - other.positive,
            negative: self.negative - other.negative,
        }
    }

    pub fn total(&self) -> u32 {
        self.positive + self.negative
    }

    pub fn weighted(&self, w: &ClassWeights) -> (f64, f64) {
        (w.positive * self.positive as f64, w.negative * self.negative as f64)
    }

    /// Weighted majority; an exact tie goes to the positive class.
    pub fn majority(&self, w: &ClassWeights) -> Label {
        let (p, n) = self.weighted(w);
        if p >= n {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    /// Weighted class margin `(W+ - W-) / (W+ + W-)`, in `[-1, 1]`.
    pub fn margin(&self, w: &ClassWeights) -> f64 {
        let (p, n) = self.weighted(w);
        (p - n) / (p + n)
    }
}

/// Gini impurity `1 - p+^2 - p-^2` of a pool with the given class masses.
pub fn gini(positive: f64, negative: f64) -> Result<f64> {
    let total = positive + negative;
    if !(total > 0.0) {
        return Err(Error::InvalidHyperparameter("Gini impurity of an empty pool".into()));
    }
    Ok(gini_unchecked(positive, negative))
}

#[inline]
fn gini_unchecked(positive: f64, negative: f64) -> f64 {
    let total = positive + negative;
    let p = positive / total;
    let q = negative / total;
    1.0 - p * p - q * q
}

/// Gini impurity of weighted counts.
#[inline]
pub fn counts_gini(c: ClassCounts, w: &ClassWeights) -> f64 {
    let (p, n) = c.weighted(w);
    gini_unchecked(p, n)
}

/// Expected child impurity of a binary partition, weighted by pool mass.
#[inline]
pub fn expected_impurity(left: ClassCounts, right: ClassCounts, w: &ClassWeights) -> f64 {
    let (lp, ln) = left.weighted(w);
    let (rp, rn) = right.weighted(w);
    let wl = lp + ln;
    let wr = rp + rn;
    (wl * gini_unchecked(lp, ln) + wr * gini_unchecked(rp, rn)) / (wl + wr)
}

/// Threshold strictly between `lo` and `hi` (with `lo < hi`) such that
/// `lo <= t < hi`.
#[inline]
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo / 2.0 + hi / 2.0;
    if m >= hi || m < lo {
        lo
    } else {
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub expected_impurity: f64,
}

/// Column-major copy of the training matrix.
pub(crate) struct Columns {
    cols: Vec<Vec<f64>>,
    n: usize,
}

impl Columns {
    pub(crate) fn new(x: &[Vec<f64>]) -> Result<Self> {
        let d = x.first().map_or(0, Vec::len);
        let mut cols = vec![Vec::with_capacity(x.len()); d];
        for row in x {
            check_dim(d, row.len())?;
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidHyperparameter(format!("non-finite training value {v}")));
                }
                cols[j].push(*v);
            }
        }
        Ok(Columns { cols, n: x.len() })
    }

    pub(crate) fn d(&self) -> usize {
        self.cols.len()
    }
}

/// Best split of `pool` (sample ids; `mult[i]` copies of sample `i`) over the
/// candidate features, or `None` when no split lowers the pool's impurity.
pub fn best_split(
    pool: &[usize],
    x: &[Vec<f64>],
    y: &[Label],
    mult: Option<&[u32]>,
    candidates: &[usize],
    weights: &ClassWeights,
) -> Result<Option<Split>> {
    let cols = Columns::new(x)?;
    let ones;
    let mult = match mult {
        Some(m) => m,
        None => {
            ones = vec![1u32; x.len()];
            &ones
        }
    };
    let mut scratch = Vec::new();
    Ok(search(pool, &cols, y, mult, candidates, weights, &mut scratch))
}

fn pool_counts(pool: &[usize], y: &[Label], mult: &[u32]) -> ClassCounts {
    let mut c = ClassCounts::default();
    for &i in pool {
        c.add(y[i], mult[i]);
    }
    c
}

fn search(
    pool: &[usize],
    cols: &Columns,
    y: &[Label],
    mult: &[u32],
    candidates: &[usize],
    w: &ClassWeights,
    order: &mut Vec<usize>,
) -> Option<Split> {
    if pool.len() < 2 {
        return None;
    }
    let total = pool_counts(pool, y, mult);
    let parent = counts_gini(total, w);
    let mut best: Option<Split> = None;
    for &f in candidates {
        let col = &cols.cols[f];
        order.clear();
        order.extend_from_slice(pool);
        order.sort_unstable_by(|&a, &b| col[a].total_cmp(&col[b]));
        let mut left = ClassCounts::default();
        for k in 0..order.len() - 1 {
            let i = order[k];
            left.add(y[i], mult[i]);
            let lo = col[i];
            let hi = col[order[k + 1]];
            if lo == hi {
                continue;
            }
            let e = expected_impurity(left, total.sub(left), w);
            if best.is_none_or(|b| e < b.expected_impurity - SPLIT_TIE_EPS) {
                best = Some(Split {
                    feature: f,
                    threshold: midpoint(lo, hi),
                    expected_impurity: e,
                });
            }
        }
    }
    best.filter(|b| b.expected_impurity < parent - MIN_IMPURITY_DECREASE)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        pool_fraction: f64,
        dominant_class: Label,
        class_counts: ClassCounts,
        impurity: f64,
        expected_impurity: f64,
    },
    Leaf {
        predicted_class: Label,
        pool_fraction: f64,
        class_counts: ClassCounts,
        impurity: f64,
    },
}

impl TreeNode {
    pub fn pool_fraction(&self) -> f64 {
        match self {
            TreeNode::Split { pool_fraction, .. } | TreeNode::Leaf { pool_fraction, .. } => *pool_fraction,
        }
    }

    pub fn class_counts(&self) -> ClassCounts {
        match self {
            TreeNode::Split { class_counts, .. } | TreeNode::Leaf { class_counts, .. } => *class_counts,
        }
    }

    /// Class predicted if the descent stopped here.
    pub fn dominant_class(&self) -> Label {
        match self {
            TreeNode::Split { dominant_class, .. } => *dominant_class,
            TreeNode::Leaf { predicted_class, .. } => *predicted_class,
        }
    }
}

/// A fitted tree stored as a flat node array; `nodes[0]` is the root and
/// children always come after their parent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub nodes: Vec<TreeNode>,
    pub n_features: usize,
    pub hyperparams: TreeHyperparams,
    pub importance: Vec<f64>,
    #[serde(default)]
    pub schema_digest: String,
}

/// Source of the per-node feature subset offered to the split search.
pub trait FeatureSampler {
    /// Candidate features for the node with heap index `node_id` (root = 1,
    /// children of `k` are `2k` and `2k + 1`). Must be sorted ascending.
    fn candidates(&self, node_id: u64, d: usize) -> Vec<usize>;
}

struct AllFeatures;

impl FeatureSampler for AllFeatures {
    fn candidates(&self, _node_id: u64, d: usize) -> Vec<usize> {
        (0..d).collect()
    }
}

/// Fits a tree on fully observed rows with every feature offered at every node.
pub fn fit_tree(x: &[Vec<f64>], y: &[Label], hp: &TreeHyperparams) -> Result<TreeModel> {
    let cols = Columns::new(x)?;
    let mult = vec![1u32; x.len()];
    fit_tree_columns(&cols, y, &mult, hp, &AllFeatures)
}

/// Fits a tree where sample `i` appears `mult[i]` times and each node only
/// considers the features the sampler offers.
pub fn fit_tree_sampled(
    x: &[Vec<f64>],
    y: &[Label],
    mult: &[u32],
    hp: &TreeHyperparams,
    sampler: &dyn FeatureSampler,
) -> Result<TreeModel> {
    let cols = Columns::new(x)?;
    fit_tree_columns(&cols, y, mult, hp, sampler)
}

pub(crate) fn fit_tree_columns(
    cols: &Columns,
    y: &[Label],
    mult: &[u32],
    hp: &TreeHyperparams,
    sampler: &dyn FeatureSampler,
) -> Result<TreeModel> {
    hp.validate()?;
    check_dim(cols.n, y.len())?;
    check_dim(cols.n, mult.len())?;
    if cols.n == 0 || cols.d() == 0 {
        return Err(Error::EmptyDataset);
    }
    let pool: Vec<usize> = (0..cols.n).filter(|&i| mult[i] > 0).collect();
    let present: Vec<Label> = pool.iter().map(|&i| y[i]).collect();
    require_both_classes(&present)?;

    let mut builder = Builder {
        cols,
        y,
        mult,
        hp,
        sampler,
        nodes: Vec::new(),
        root_mass: 0.0,
        scratch: Vec::new(),
    };
    let root_counts = pool_counts(&pool, y, mult);
    let (p, n) = root_counts.weighted(&hp.class_weights);
    builder.root_mass = p + n;
    builder.grow(pool, 0, 1);
    let nodes = builder.nodes;
    let importance = importance_of(&nodes, cols.d());
    Ok(TreeModel {
        nodes,
        n_features: cols.d(),
        hyperparams: hp.clone(),
        importance,
        schema_digest: String::new(),
    })
}

struct Builder<'a> {
    cols: &'a Columns,
    y: &'a [Label],
    mult: &'a [u32],
    hp: &'a TreeHyperparams,
    sampler: &'a dyn FeatureSampler,
    nodes: Vec<TreeNode>,
    root_mass: f64,
    scratch: Vec<usize>,
}

impl Builder<'_> {
    /// Grows the subtree for `pool` and returns its node index.
    fn grow(&mut self, pool: Vec<usize>, depth: usize, node_id: u64) -> usize {
        let w = &self.hp.class_weights;
        let counts = pool_counts(&pool, self.y, self.mult);
        let (p, n) = counts.weighted(w);
        let pool_fraction = (p + n) / self.root_mass;
        let impurity = counts_gini(counts, w);
        let dominant = counts.majority(w);
        let idx = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            predicted_class: dominant,
            pool_fraction,
            class_counts: counts,
            impurity,
        });

        if depth >= self.hp.max_depth
            || (counts.total() as usize) < self.hp.min_pool
            || impurity <= self.hp.min_impurity
        {
            return idx;
        }
        let candidates = self.sampler.candidates(node_id, self.cols.d());
        let Some(split) = search(&pool, self.cols, self.y, self.mult, &candidates, w, &mut self.scratch) else {
            return idx;
        };
        let col = &self.cols.cols[split.feature];
        let (left_pool, right_pool): (Vec<usize>, Vec<usize>) =
            pool.into_iter().partition(|&i| col[i] <= split.threshold);
        let left = self.grow(left_pool, depth + 1, 2 * node_id);
        let right = self.grow(right_pool, depth + 1, 2 * node_id + 1);
        self.nodes[idx] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            pool_fraction,
            dominant_class: dominant,
            class_counts: counts,
            impurity,
            expected_impurity: split.expected_impurity,
        };
        idx
    }
}

fn importance_of(nodes: &[TreeNode], d: usize) -> Vec<f64> {
    let mut imp = vec![0.0; d];
    for node in nodes {
        if let TreeNode::Split {
            feature,
            pool_fraction,
            impurity,
            expected_impurity,
            ..
        } = node
        {
            imp[*feature] += pool_fraction * (impurity - expected_impurity);
        }
    }
    let total: f64 = imp.iter().sum();
    if total > 0.0 {
        imp.iter_mut().for_each(|v| *v /= total);
    }
    imp
}

impl TreeModel {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    /// Index of the node where descent for `x` stops, never going deeper
    /// than `max_depth`.
    fn descend(&self, x: &[f64], max_depth: usize) -> usize {
        let mut idx = 0;
        let mut depth = 0;
        while let TreeNode::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } = &self.nodes[idx]
        {
            if depth >= max_depth {
                break;
            }
            idx = if x[*feature] <= *threshold { *left } else { *right };
            depth += 1;
        }
        idx
    }

    /// Label and weighted class margin of the reached leaf.
    pub fn predict(&self, x: &[f64]) -> Result<(Label, f64)> {
        self.predict_at_depth(x, usize::MAX)
    }

    /// Prediction of the same tree cut at `depth`: a node at that depth acts
    /// as a leaf. Identical to refitting with `max_depth = depth`.
    pub fn predict_at_depth(&self, x: &[f64], depth: usize) -> Result<(Label, f64)> {
        check_dim(self.n_features, x.len())?;
        let node = &self.nodes[self.descend(x, depth)];
        let margin = node.class_counts().margin(&self.hyperparams.class_weights);
        Ok((node.dominant_class(), margin))
    }

    /// Number of comparisons on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Split { .. })).count()
    }

    /// The tree cut at `depth`, with nodes renumbered and importance
    /// recomputed.
    pub fn truncated(&self, depth: usize) -> TreeModel {
        fn copy(src: &[TreeNode], i: usize, depth: usize, limit: usize, out: &mut Vec<TreeNode>) -> usize {
            let idx = out.len();
            match &src[i] {
                TreeNode::Split {
                    pool_fraction,
                    dominant_class,
                    class_counts,
                    impurity,
                    ..
                } if depth >= limit => {
                    out.push(TreeNode::Leaf {
                        predicted_class: *dominant_class,
                        pool_fraction: *pool_fraction,
                        class_counts: *class_counts,
                        impurity: *impurity,
                    });
                }
                TreeNode::Split { left, right, .. } => {
                    out.push(src[i].clone());
                    let l = copy(src, *left, depth + 1, limit, out);
                    let r = copy(src, *right, depth + 1, limit, out);
                    if let TreeNode::Split { left, right, .. } = &mut out[idx] {
                        *left = l;
                        *right = r;
                    }
                }
                leaf => out.push(leaf.clone()),
            }
            idx
        }
        let mut nodes = Vec::with_capacity(self.nodes.len());
        copy(&self.nodes, 0, 0, depth, &mut nodes);
        let importance = importance_of(&nodes, self.n_features);
        TreeModel {
            nodes,
            n_features: self.n_features,
            hyperparams: TreeHyperparams {
                max_depth: depth.min(self.hyperparams.max_depth),
                ..self.hyperparams.clone()
            },
            importance,
            schema_digest: self.schema_digest.clone(),
        }
    }

    /// Checks structural invariants of a (possibly deserialized) tree.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidBundle(m));
        if self.nodes.is_empty() {
            return bad("tree has no nodes".into());
        }
        check_dim(self.n_features, self.importance.len())?;
        let mut reached = vec![false; self.nodes.len()];
        reached[0] = true;
        for (i, node) in self.nodes.iter().enumerate() {
            if let TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } = node
            {
                if *feature >= self.n_features {
                    return Err(Error::BundleDimension(format!(
                        "tree splits on feature {feature} but has {} inputs",
                        self.n_features
                    )));
                }
                if !threshold.is_finite() {
                    return bad(format!("node {i} has a non-finite threshold"));
                }
                for &c in [left, right] {
                    if c <= i || c >= self.nodes.len() || reached[c] {
                        return bad(format!("node {i} has an invalid child index {c}"));
                    }
                    reached[c] = true;
                }
            }
        }
        if reached.iter().any(|r| !r) {
            return bad("tree has unreachable nodes".into());
        }
        Ok(())
    }

    /// Indented plain-text rules, one node per line, annotated with the
    /// pool fraction and dominant class.
    pub fn render(&self, names: Option<&[String]>) -> String {
        let name = |f: usize| names.and_then(|n| n.get(f).cloned()).unwrap_or_else(|| format!("x[{f}]"));
        let mut out = String::new();
        let mut stack = vec![(0usize, 0usize, String::new())];
        while let Some((i, indent, prefix)) = stack.pop() {
            let pad = "  ".repeat(indent);
            match &self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    pool_fraction,
                    dominant_class,
                    ..
                } => {
                    let _ = writeln!(
                        out,
                        "{pad}{prefix}{} <= {threshold}  [pool {:.1}%, dominant {dominant_class}]",
                        name(*feature),
                        pool_fraction * 100.0
                    );
                    stack.push((*right, indent + 1, "else: ".into()));
                    stack.push((*left, indent + 1, "then: ".into()));
                }
                TreeNode::Leaf {
                    predicted_class,
                    pool_fraction,
                    class_counts,
                    ..
                } => {
                    let _ = writeln!(
                        out,
                        "{pad}{prefix}predict {predicted_class}  [pool {:.1}%, counts +{}/-{}]",
                        pool_fraction * 100.0,
                        class_counts.positive,
                        class_counts.negative
                    );
                }
            }
        }
        out
    }
}

/// Label-only convenience over [`TreeModel::predict`].
pub fn predict_tree(model: &TreeModel, x: &[f64]) -> Result<Label> {
    model.predict(x).map(|(l, _)| l)
}

/// Normalized Gini importance: each split credits its feature with
/// `pool_fraction * (impurity - expected child impurity)`; the vector is
/// scaled to sum to 1 (all zeros for a single-leaf tree).
pub fn tree_importance(model: &TreeModel) -> Vec<f64> {
    model.importance.clone()
}

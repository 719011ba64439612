//! Random forests: bootstrap-resampled CART trees that each see a fresh
//! random feature subset at every node, combined by an unweighted vote.
//!
//! Randomness is keyed, not sequential. Tree `t` derives its seed from the
//! forest seed and `t` alone, and a node's feature subset derives from the
//! tree seed and the node's heap index. Consequently a forest of `k` trees
//! is exactly the first `k` trees of a larger forest with the same seed, and
//! cutting a member tree at depth `k` reproduces the tree grown with
//! `max_depth = k`.

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{fit_tree_columns, Columns, FeatureSampler, TreeHyperparams, TreeModel};
use crate::dataio::{require_both_classes, Label};
use crate::error::{check_dim, Error, Result};

/// A single-class bootstrap draw is redrawn at most this many times.
pub const MAX_BOOTSTRAP_REDRAWS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    All,
    Sqrt,
    Log2,
}

impl MaxFeatures {
    pub const ALL: [MaxFeatures; 3] = [MaxFeatures::All, MaxFeatures::Sqrt, MaxFeatures::Log2];

    /// Features offered per node out of `d`: `d`, `ceil(sqrt d)` or
    /// `ceil(log2 d)`, never less than one.
    pub fn count(self, d: usize) -> usize {
        let k = match self {
            MaxFeatures::All => return d.max(1),
            MaxFeatures::Sqrt => (d as f64).sqrt().ceil(),
            MaxFeatures::Log2 => (d as f64).log2().ceil(),
        };
        (k as usize).clamp(1, d.max(1))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MaxFeatures::All => "all",
            MaxFeatures::Sqrt => "sqrt",
            MaxFeatures::Log2 => "log2",
        }
    }
}

impl std::str::FromStr for MaxFeatures {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(MaxFeatures::All),
            "sqrt" => Ok(MaxFeatures::Sqrt),
            "log2" => Ok(MaxFeatures::Log2),
            other => Err(Error::InvalidHyperparameter(format!(
                "max_features must be all, sqrt or log2, got '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestHyperparams {
    pub n_tree: usize,
    pub max_features: MaxFeatures,
    pub tree: TreeHyperparams,
    pub seed: u64,
    /// Draw a bootstrap sample per tree. Turning this off is only useful
    /// for testing: every tree then sees the full training set.
    #[serde(default = "default_true")]
    pub bootstrap: bool,
}

fn default_true() -> bool {
    true
}

impl ForestHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.n_tree == 0 {
            return Err(Error::InvalidHyperparameter("n_tree must be >= 1".into()));
        }
        self.tree.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<TreeModel>,
    pub hyperparams: ForestHyperparams,
    #[serde(default)]
    pub schema_digest: String,
}

/// Seed of member tree `t`.
pub fn tree_seed(forest_seed: u64, t: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(forest_seed);
    rng.set_stream(t as u64);
    rng.next_u64()
}

struct NodeSubsets {
    tree_seed: u64,
    k: usize,
}

impl FeatureSampler for NodeSubsets {
    fn candidates(&self, node_id: u64, d: usize) -> Vec<usize> {
        if self.k >= d {
            return (0..d).collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.tree_seed);
        rng.set_stream(node_id);
        let mut picked = index::sample(&mut rng, d, self.k).into_vec();
        picked.sort_unstable();
        picked
    }
}

/// Bootstrap multiplicities for one tree; redraws single-class samples.
fn bootstrap(y: &[Label], seed: u64) -> Result<Vec<u32>> {
    bootstrap_with(y, seed, MAX_BOOTSTRAP_REDRAWS)
}

fn bootstrap_with(y: &[Label], seed: u64, redraws: usize) -> Result<Vec<u32>> {
    let n = y.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..=redraws {
        let mut mult = vec![0u32; n];
        for _ in 0..n {
            mult[rng.random_range(0..n)] += 1;
        }
        let has = |l: Label| (0..n).any(|i| mult[i] > 0 && y[i] == l);
        if has(Label::Positive) && has(Label::Negative) {
            return Ok(mult);
        }
    }
    Err(Error::DegenerateBootstrap { attempts: redraws + 1 })
}

pub fn fit_forest(x: &[Vec<f64>], y: &[Label], hp: &ForestHyperparams) -> Result<ForestModel> {
    let cols = Columns::new(x)?;
    fit_forest_columns(&cols, y, hp)
}

pub(crate) fn fit_forest_columns(cols: &Columns, y: &[Label], hp: &ForestHyperparams) -> Result<ForestModel> {
    hp.validate()?;
    require_both_classes(y)?;
    let d = cols.d();
    let k = hp.max_features.count(d);
    let trees = (0..hp.n_tree)
        .into_par_iter()
        .map(|t| {
            let seed = tree_seed(hp.seed, t);
            let mult = if hp.bootstrap {
                bootstrap(y, seed)?
            } else {
                vec![1; y.len()]
            };
            fit_tree_columns(cols, y, &mult, &hp.tree, &NodeSubsets { tree_seed: seed, k })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        trees,
        hyperparams: hp.clone(),
        schema_digest: String::new(),
    })
}

impl ForestModel {
    pub fn n_features(&self) -> usize {
        self.trees[0].n_features
    }

    /// Majority vote; the score is `(votes+ - votes-) / n_tree` and a tied
    /// vote goes to the positive class.
    pub fn predict(&self, x: &[f64]) -> Result<(Label, f64)> {
        self.predict_prefix(x, self.trees.len(), usize::MAX)
    }

    /// Vote of the first `n_tree` members, each cut at `depth`. Equivalent
    /// to predicting with a forest refitted at those settings.
    pub fn predict_prefix(&self, x: &[f64], n_tree: usize, depth: usize) -> Result<(Label, f64)> {
        check_dim(self.n_features(), x.len())?;
        let n = n_tree.min(self.trees.len());
        let mut balance = 0i64;
        for tree in &self.trees[..n] {
            match tree.predict_at_depth(x, depth)?.0 {
                Label::Positive => balance += 1,
                Label::Negative => balance -= 1,
            }
        }
        let score = balance as f64 / n as f64;
        Ok((Label::from_score(score), score))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::InvalidBundle("forest has no trees".into()));
        }
        check_dim(self.hyperparams.n_tree, self.trees.len())?;
        let d = self.n_features();
        for t in &self.trees {
            check_dim(d, t.n_features)?;
            t.validate()?;
        }
        Ok(())
    }
}

pub fn predict_forest(model: &ForestModel, x: &[f64]) -> Result<Label> {
    model.predict(x).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cart::fit_tree;
    use crate::dataio::ClassWeights;
    use Label::{Negative as N, Positive as P};

    fn toy(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Label>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let y = x
            .iter()
            .map(|r: &Vec<f64>| if r[0] + 0.5 * r[1] * r[2] > 0.0 { P } else { N })
            .collect();
        (x, y)
    }

    fn hp(n_tree: usize, max_features: MaxFeatures, depth: usize) -> ForestHyperparams {
        ForestHyperparams {
            n_tree,
            max_features,
            tree: TreeHyperparams::with_depth(depth),
            seed: 42,
            bootstrap: true,
        }
    }

    #[test]
    fn subset_sizes() {
        assert_eq!(MaxFeatures::Log2.count(15), 4);
        assert_eq!(MaxFeatures::Log2.count(13), 4);
        assert_eq!(MaxFeatures::Sqrt.count(13), 4);
        assert_eq!(MaxFeatures::Sqrt.count(16), 4);
        assert_eq!(MaxFeatures::All.count(13), 13);
        assert_eq!(MaxFeatures::Log2.count(1), 1);
        assert_eq!(MaxFeatures::Log2.count(2), 1);
    }

    #[test]
    fn node_subsets_are_sorted_keyed_and_sized() {
        let s = NodeSubsets { tree_seed: 9, k: 4 };
        let a = s.candidates(5, 15);
        assert_eq!(a.len(), 4);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, s.candidates(5, 15));
        let distinct = (1..40u64).map(|id| s.candidates(id, 15)).collect::<std::collections::BTreeSet<_>>();
        assert!(distinct.len() > 20);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let (x, y) = toy(60, 1);
        let a = fit_forest(&x, &y, &hp(7, MaxFeatures::Sqrt, 4)).unwrap();
        let b = fit_forest(&x, &y, &hp(7, MaxFeatures::Sqrt, 4)).unwrap();
        assert_eq!(a, b);
        let c = fit_forest(&x, &y, &ForestHyperparams { seed: 43, ..hp(7, MaxFeatures::Sqrt, 4) }).unwrap();
        assert_ne!(a, c);
        for row in &x {
            let (l, s) = c.predict(row).unwrap();
            assert!((-1.0..=1.0).contains(&s));
            assert_eq!(l, Label::from_score(s));
        }
    }

    #[test]
    fn smaller_forests_are_prefixes() {
        let (x, y) = toy(50, 2);
        let big = fit_forest(&x, &y, &hp(10, MaxFeatures::Log2, 5)).unwrap();
        let small = fit_forest(&x, &y, &hp(4, MaxFeatures::Log2, 5)).unwrap();
        assert_eq!(&big.trees[..4], &small.trees[..]);
        let shallow = fit_forest(&x, &y, &hp(4, MaxFeatures::Log2, 2)).unwrap();
        for row in &x {
            assert_eq!(big.predict_prefix(row, 4, 2).unwrap(), shallow.predict(row).unwrap());
        }
    }

    #[test]
    fn without_bootstrap_and_with_all_features_members_equal_a_single_tree() {
        let (x, y) = toy(40, 3);
        let mut h = hp(3, MaxFeatures::All, 4);
        h.bootstrap = false;
        let forest = fit_forest(&x, &y, &h).unwrap();
        let tree = fit_tree(&x, &y, &h.tree).unwrap();
        for member in &forest.trees {
            assert_eq!(member, &tree);
        }
        for row in &x {
            assert_eq!(predict_forest(&forest, row).unwrap(), tree.predict(row).unwrap().0);
        }
    }

    #[test]
    fn vote_tally_matches_members() {
        let (x, y) = toy(80, 4);
        let forest = fit_forest(&x, &y, &hp(6, MaxFeatures::Sqrt, 3)).unwrap();
        let (probe, _) = toy(50, 99);
        for row in &probe {
            let pos = forest.trees.iter().filter(|t| t.predict(row).unwrap().0 == P).count();
            let expected = if 2 * pos >= forest.trees.len() { P } else { N };
            assert_eq!(predict_forest(&forest, row).unwrap(), expected);
        }
    }

    fn constant_tree(label: Label) -> TreeModel {
        let x = vec![vec![0.0], vec![1.0]];
        let y = [label, label.opposite()];
        // depth-1 tree whose both leaves we then force to `label`
        let mut t = fit_tree(&x, &y, &TreeHyperparams::with_depth(1)).unwrap().truncated(0);
        if let crate::cart::TreeNode::Leaf { predicted_class, .. } = &mut t.nodes[0] {
            *predicted_class = label;
        }
        t
    }

    #[test]
    fn vote_examples_and_tie_rule() {
        let forest = |labels: &[Label]| ForestModel {
            trees: labels.iter().map(|&l| constant_tree(l)).collect(),
            hyperparams: hp(labels.len(), MaxFeatures::All, 1),
            schema_digest: String::new(),
        };
        assert_eq!(predict_forest(&forest(&[P, P, N]), &[0.0]).unwrap(), P);
        assert_eq!(predict_forest(&forest(&[N, N, P]), &[0.0]).unwrap(), N);
        let tie = forest(&[P, N]);
        assert_eq!(tie.predict(&[0.0]).unwrap(), (P, 0.0));
    }

    #[test]
    fn single_class_bootstraps_are_redrawn_then_fail() {
        // With two samples half of all draws are single-class.
        let y = [P, N];
        let failing = (0..100).find(|&s| bootstrap_with(&y, s, 0).is_err()).unwrap();
        assert!(matches!(
            bootstrap_with(&y, failing, 0),
            Err(Error::DegenerateBootstrap { attempts: 1 })
        ));
        // ...while redrawing rescues essentially every seed (0.5^17 odds).
        assert!((0..500).all(|s| bootstrap(&y, s).is_ok()));
        let m = bootstrap(&y, failing).unwrap();
        assert_eq!(m, vec![1, 1]);
    }

    #[test]
    fn class_weights_reach_member_trees() {
        let (x, y) = toy(30, 5);
        let mut h = hp(2, MaxFeatures::All, 2);
        h.tree.class_weights = ClassWeights { positive: 3.0, negative: 0.5 };
        let f = fit_forest(&x, &y, &h).unwrap();
        assert!(f.trees.iter().all(|t| t.hyperparams.class_weights == h.tree.class_weights));
    }
}

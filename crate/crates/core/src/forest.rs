//! Binary random-forest classifier: bootstrap-sampled, fully grown Gini
//! trees with a random feature subset per split and majority voting.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features tried per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(u8),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> u8 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(c) => return c,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    /// Best `(feature, threshold, weighted child impurity)` over the first
    /// `mtry` features of a random permutation; further features are tried
    /// only when none of those admits a split.
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64)> {
        let d = self.x[0].len();
        let mut feats: Vec<usize> = (0..d).collect();
        feats.shuffle(&mut self.rng);
        let total_pos = idx.iter().filter(|&&i| self.y[i] == 1).count();
        let n = idx.len();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut sorted = idx.to_vec();
        for (tried, &f) in feats.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            sorted.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left_pos = 0;
            for s in 1..n {
                left_pos += usize::from(self.y[sorted[s - 1]] == 1);
                let (lo, hi) = (self.x[sorted[s - 1]][f], self.x[sorted[s]][f]);
                if lo == hi {
                    continue;
                }
                let score = s as f64 * gini(left_pos, s) + (n - s) as f64 * gini(total_pos - left_pos, n - s);
                if best.is_none_or(|(_, _, b)| score < b) {
                    let mut t = lo + (hi - lo) / 2.0;
                    if t >= hi {
                        t = lo;
                    }
                    best = Some((f, t, score));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    fn majority(&self, idx: &[usize]) -> u8 {
        let pos = idx.iter().filter(|&&i| self.y[i] == 1).count();
        u8::from(2 * pos > idx.len())
    }

    fn grow(&mut self, idx: Vec<usize>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(self.majority(&idx)));
        let pos = idx.iter().filter(|&&i| self.y[i] == 1).count();
        if pos == 0 || pos == idx.len() {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&idx) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| self.x[i][feature] <= threshold);
        let left = self.grow(l);
        let right = self.grow(r);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

fn check_data(x: &[Vec<f64>], y: &[u8]) -> Result<usize> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} rows, {} labels", x.len(), y.len())));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch("feature rows must share a positive dimension".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forest features".into()));
    }
    if y.iter().any(|&l| l > 1) {
        return Err(Error::invalid("forest labels must be 0 or 1"));
    }
    Ok(d)
}

pub fn train_tree(x: &[Vec<f64>], y: &[u8], mtry: usize, seed: u64) -> Result<Tree> {
    check_data(x, y)?;
    let mut rng = seed::rng(seed);
    let n = x.len();
    let boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut b = Builder {
        x,
        y,
        mtry: mtry.max(1),
        rng,
        nodes: Vec::new(),
    };
    b.grow(boot);
    Ok(Tree { nodes: b.nodes })
}

impl RandomForest {
    pub fn train(x: &[Vec<f64>], y: &[u8], cfg: &ForestConfig, seed: u64) -> Result<Self> {
        let d = check_data(x, y)?;
        if cfg.n_trees == 0 {
            return Err(Error::invalid("forest needs at least one tree"));
        }
        let mtry = cfg.max_features.unwrap_or(((d as f64).sqrt().floor() as usize).max(1)).min(d);
        let trees = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| train_tree(x, y, mtry, seed::derive_seed(seed, "forest-tree", t as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { trees, n_features: d })
    }

    /// Majority vote; an even split goes to class 0.
    pub fn predict(&self, x: &[f64]) -> u8 {
        let votes = self.trees.iter().filter(|t| t.predict(x) == 1).count();
        u8::from(2 * votes > self.trees.len())
    }
}

/// Mean of the per-class F1 scores for binary labels. A class absent from
/// both truth and prediction scores 1.
pub fn f1_macro(truth: &[u8], pred: &[u8]) -> f64 {
    let f1 = |c: u8| {
        let tp = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p == c).count();
        let fp = truth.iter().zip(pred).filter(|(t, p)| **t != c && **p == c).count();
        let fn_ = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p != c).count();
        if tp + fp + fn_ == 0 {
            1.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        }
    };
    (f1(0) + f1(1)) / 2.0
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(y: &[u8], folds: usize, seed: u64) -> Vec<usize> {
    let mut assign = vec![0; y.len()];
    for c in [0u8, 1] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        idx.shuffle(&mut seed::rng(seed::derive_seed(seed, "folds", u64::from(c))));
        for (r, i) in idx.into_iter().enumerate() {
            assign[i] = r % folds;
        }
    }
    assign
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub mean_f1: f64,
    pub per_fold: Vec<f64>,
    /// Sample standard deviation across folds.
    pub std: f64,
}

pub fn cross_validate(x: &[Vec<f64>], y: &[u8], folds: usize, cfg: &ForestConfig, seed: u64) -> Result<CrossValidation> {
    check_data(x, y)?;
    if folds < 2 || x.len() < folds {
        return Err(Error::invalid(format!("{folds} folds for {} rows", x.len())));
    }
    if y.iter().all(|&l| l == y[0]) {
        return Err(Error::invalid("cross-validation needs both classes"));
    }
    let assign = stratified_folds(y, folds, seed);
    let per_fold = (0..folds)
        .map(|f| {
            let (train, test): (Vec<usize>, Vec<usize>) = (0..x.len()).partition(|&i| assign[i] != f);
            let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let ty: Vec<u8> = train.iter().map(|&i| y[i]).collect();
            let forest = RandomForest::train(&tx, &ty, cfg, seed::derive_seed(seed, "fold-forest", f as u64))?;
            let truth: Vec<u8> = test.iter().map(|&i| y[i]).collect();
            let pred: Vec<u8> = test.iter().map(|&i| forest.predict(&x[i])).collect();
            Ok(f1_macro(&truth, &pred))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean_f1 = per_fold.iter().sum::<f64>() / folds as f64;
    let std = (per_fold.iter().map(|v| (v - mean_f1).powi(2)).sum::<f64>() / (folds - 1) as f64).sqrt();
    Ok(CrossValidation { mean_f1, per_fold, std })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_macro_values() {
        assert_eq!(f1_macro(&[0, 1, 0, 1], &[0, 1, 0, 1]), 1.0);
        assert_eq!(f1_macro(&[0, 1], &[1, 0]), 0.0);
        // class 1: tp 1, fp 1, fn 0 → 2/3; class 0: tp 1, fp 0, fn 1 → 2/3
        assert!((f1_macro(&[0, 0, 1], &[0, 1, 1]) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn folds_are_stratified_and_partition() {
        let y: Vec<u8> = (0..53).map(|i| u8::from(i % 3 == 0)).collect();
        let a = stratified_folds(&y, 5, 9);
        assert_eq!(a, stratified_folds(&y, 5, 9));
        for c in [0, 1] {
            let counts: Vec<usize> = (0..5).map(|f| (0..y.len()).filter(|&i| a[i] == f && y[i] == c).count()).collect();
            assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1, "{counts:?}");
        }
        assert!(a.iter().all(|&f| f < 5));
    }

    #[test]
    fn tree_fits_training_data() {
        // XOR needs depth 2 and no single split reduces impurity
        let x: Vec<Vec<f64>> = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]].iter().map(|r| r.to_vec()).collect();
        let y = [0, 1, 1, 0];
        let mut b = Builder {
            x: &x,
            y: &y,
            mtry: 1,
            rng: seed::rng(1),
            nodes: Vec::new(),
        };
        b.grow((0..4).collect());
        let t = Tree { nodes: b.nodes };
        for (r, l) in x.iter().zip(y) {
            assert_eq!(t.predict(r), l);
        }
    }

    #[test]
    fn separable_gives_perfect_f1() {
        // class 0 in [0, 0.3], class 1 in [0.7, 1]: every split midpoint falls in the gap
        let y: Vec<u8> = (0..100).map(|i| u8::from(i % 2 == 1)).collect();
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![0.7 * f64::from(y[i]) + (i % 7) as f64 * 0.05]).collect();
        let cv = cross_validate(&x, &y, 5, &ForestConfig::default(), 3).unwrap();
        assert_eq!(cv.mean_f1, 1.0);
        assert_eq!(cv.per_fold.len(), 5);
    }

    #[test]
    fn deterministic_forest() {
        let x: Vec<Vec<f64>> = (0..60).map(|i| vec![(i * 37 % 11) as f64, (i % 5) as f64, i as f64]).collect();
        let y: Vec<u8> = (0..60).map(|i| u8::from(i % 3 == 0)).collect();
        let cfg = ForestConfig { n_trees: 10, max_features: None };
        assert_eq!(RandomForest::train(&x, &y, &cfg, 4).unwrap(), RandomForest::train(&x, &y, &cfg, 4).unwrap());
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![1.0]; 10];
        assert!(cross_validate(&x, &[0; 10], 5, &ForestConfig::default(), 0).is_err());
        assert!(cross_validate(&x[..3], &[0, 1, 0], 5, &ForestConfig::default(), 0).is_err());
    }
}

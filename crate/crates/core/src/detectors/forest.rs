use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features tried per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 500, max_features: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        samples: usize,
        /// Gini impurity of this node before splitting.
        impurity: f64,
        /// Impurity minus the sample-weighted impurity of the children.
        decrease: f64,
    },
    Leaf {
        proba: Vec<f64>,
        samples: usize,
    },
}

/// Nodes are stored flat; index 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_proba(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split { feature, threshold, left, right, .. } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { proba, .. } => return proba,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, at: usize) -> usize {
            match &t.nodes[at] {
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(self, 0)
    }

    fn root_samples(&self) -> usize {
        match &self.nodes[0] {
            Node::Split { samples, .. } | Node::Leaf { samples, .. } => *samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub n_classes: usize,
    pub feature_subset_size: usize,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    mtry: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    weighted: f64,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    fn leaf(&mut self, counts: &[usize], n: usize) -> usize {
        self.nodes.push(Node::Leaf { proba: counts.iter().map(|&c| c as f64 / n as f64).collect(), samples: n });
        self.nodes.len() - 1
    }

    fn best_on_feature(&self, idx: &mut [usize], f: usize, total: &[usize]) -> Option<BestSplit> {
        idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
        let n = idx.len();
        let mut left = vec![0; self.n_classes];
        let mut best: Option<BestSplit> = None;
        for k in 0..n - 1 {
            left[self.y[idx[k]]] += 1;
            let (lo, hi) = (self.x[idx[k]][f], self.x[idx[k + 1]][f]);
            if lo == hi {
                continue;
            }
            let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
            let nl = k + 1;
            let weighted = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl)) / n as f64;
            if best.as_ref().is_none_or(|b| weighted < b.weighted) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(BestSplit { feature: f, threshold, weighted });
            }
        }
        best
    }

    fn grow(&mut self, mut idx: Vec<usize>, g: &mut rng::Rng) -> usize {
        let n = idx.len();
        let counts = self.counts(&idx);
        let impurity = gini(&counts, n);
        if n < 2 || counts.iter().filter(|&&c| c > 0).count() <= 1 {
            return self.leaf(&counts, n);
        }
        let d = self.x[0].len();
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(g);
        let mut chosen = Vec::with_capacity(self.mtry);
        for f in order {
            let first = self.x[idx[0]][f];
            if idx.iter().any(|&i| self.x[i][f] != first) {
                chosen.push(f);
                if chosen.len() == self.mtry {
                    break;
                }
            }
        }
        chosen.sort_unstable();
        let mut best: Option<BestSplit> = None;
        for f in chosen {
            if let Some(s) = self.best_on_feature(&mut idx, f, &counts) {
                if best.as_ref().is_none_or(|b| s.weighted < b.weighted) {
                    best = Some(s);
                }
            }
        }
        let Some(best) = best else {
            return self.leaf(&counts, n);
        };
        let (li, ri): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][best.feature] <= best.threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { proba: vec![], samples: n });
        let left = self.grow(li, g);
        let right = self.grow(ri, g);
        self.nodes[at] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            samples: n,
            impurity,
            decrease: (impurity - best.weighted).max(0.0),
        };
        at
    }
}

/// Bagged CART ensemble. Each tree sees a bootstrap sample and draws its own
/// seed from `cfg.seed`, so the result does not depend on thread scheduling.
pub fn fit_random_forest(x: &[Vec<f64>], y: &[usize], cfg: &ForestConfig) -> Result<Forest> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::invalid(format!("{} rows but {} labels", x.len(), y.len())));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("rows must share a nonzero length"));
    }
    if cfg.n_trees == 0 {
        return Err(Error::invalid("n_trees must be positive"));
    }
    let n_classes = y.iter().max().map_or(0, |m| m + 1).max(2);
    if (0..n_classes).filter(|c| y.contains(c)).count() < 2 {
        return Err(Error::invalid("random forest needs at least two classes present"));
    }
    let mtry = cfg.max_features.unwrap_or_else(|| (d as f64).sqrt().floor() as usize).clamp(1, d);
    let n = x.len();
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut g = rng::seeded(rng::derive_seed(cfg.seed, t as u64));
            let sample: Vec<usize> = (0..n).map(|_| g.random_range(0..n)).collect();
            let mut b = Builder { x, y, n_classes, mtry, nodes: Vec::new() };
            b.grow(sample, &mut g);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(Forest { trees, n_features: d, n_classes, feature_subset_size: mtry })
}

/// Mean over trees of the leaf probability of class 1 (OOD).
pub fn predict_proba_forest(forest: &Forest, x: &[f64]) -> f64 {
    forest.trees.iter().map(|t| t.leaf_proba(x).get(1).copied().unwrap_or(0.0)).sum::<f64>() / forest.trees.len() as f64
}

/// Mean decrease in impurity per feature, normalized to sum to 1. A forest
/// without any split yields the zero vector.
pub fn gini_importances(forest: &Forest) -> Vec<f64> {
    let mut imp = vec![0.0; forest.n_features];
    for tree in &forest.trees {
        let root = tree.root_samples() as f64;
        for node in &tree.nodes {
            if let Node::Split { feature, samples, decrease, .. } = node {
                imp[*feature] += *samples as f64 / root * decrease;
            }
        }
    }
    imp.iter_mut().for_each(|v| *v /= forest.trees.len() as f64);
    let total: f64 = imp.iter().sum();
    if total > 0.0 {
        imp.iter_mut().for_each(|v| *v /= total);
    }
    imp
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor(copies: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let base = [([0.0, 0.0], 0), ([1.0, 1.0], 0), ([0.0, 1.0], 1), ([1.0, 0.0], 1)];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..copies {
            for (p, l) in base {
                x.push(p.to_vec());
                y.push(l);
            }
        }
        (x, y)
    }

    #[test]
    fn solves_xor() {
        let (x, y) = xor(25);
        let cfg = ForestConfig { n_trees: 100, seed: 3, ..Default::default() };
        let f = fit_random_forest(&x, &y, &cfg).unwrap();
        let correct = x.iter().zip(&y).filter(|(r, &l)| usize::from(predict_proba_forest(&f, r) >= 0.5) == l).count();
        assert!(correct as f64 / x.len() as f64 >= 0.95);
    }

    #[test]
    fn deterministic_under_seed() {
        let (x, y) = xor(5);
        let cfg = ForestConfig { n_trees: 20, seed: 11, ..Default::default() };
        assert_eq!(fit_random_forest(&x, &y, &cfg).unwrap(), fit_random_forest(&x, &y, &cfg).unwrap());
    }

    #[test]
    fn leaves_are_distributions() {
        let (x, y) = xor(3);
        let f = fit_random_forest(&x, &y, &ForestConfig { n_trees: 10, ..Default::default() }).unwrap();
        for t in &f.trees {
            for node in &t.nodes {
                match node {
                    Node::Leaf { proba, .. } => assert!((proba.iter().sum::<f64>() - 1.0).abs() < 1e-12),
                    Node::Split { threshold, .. } => assert!(threshold.is_finite()),
                }
            }
        }
    }

    #[test]
    fn hand_built_predictions() {
        let leaf = |p: Vec<f64>| Tree { nodes: vec![Node::Leaf { proba: p, samples: 10 }] };
        let single = Forest { trees: vec![leaf(vec![0.3, 0.7])], n_features: 1, n_classes: 2, feature_subset_size: 1 };
        assert_eq!(predict_proba_forest(&single, &[0.0]), 0.7);
        let ones = Forest { trees: vec![leaf(vec![0.0, 1.0]); 3], n_features: 1, n_classes: 2, feature_subset_size: 1 };
        assert_eq!(predict_proba_forest(&ones, &[0.0]), 1.0);
        assert_eq!(gini_importances(&ones), vec![0.0]);
    }

    #[test]
    fn informative_feature_dominates_importance() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![(i % 2) as f64, ((i * 7919) % 13) as f64]).collect();
        let y: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let f = fit_random_forest(&x, &y, &ForestConfig { n_trees: 50, max_features: Some(2), seed: 1 }).unwrap();
        let imp = gini_importances(&f);
        assert!(imp[0] > 0.9, "{imp:?}");
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_class_rejected() {
        assert!(fit_random_forest(&[vec![0.0], vec![1.0]], &[1, 1], &ForestConfig::default()).is_err());
    }
}

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IsolationConfig {
    pub n_trees: usize,
    pub subsample: usize,
    pub seed: u64,
}

impl Default for IsolationConfig {
    fn default() -> Self {
        IsolationConfig { n_trees: 100, subsample: 256, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum INode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { size: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ITree {
    pub nodes: Vec<INode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsolationForestModel {
    pub trees: Vec<ITree>,
    /// Rows each tree was built from (the configured subsample, capped at n).
    pub subsample_size: usize,
    pub n_features: usize,
}

/// Average unsuccessful-search path length in a binary search tree of `n`
/// nodes.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            let harmonic = (n - 1.0).ln() + 0.577_215_664_901_532_9;
            2.0 * harmonic - 2.0 * (n - 1.0) / n
        }
    }
}

fn grow(
    x: &[Vec<f64>],
    idx: Vec<usize>,
    depth: usize,
    limit: usize,
    g: &mut rng::Rng,
    nodes: &mut Vec<INode>,
) -> usize {
    let at = nodes.len();
    nodes.push(INode::Leaf { size: idx.len() });
    if depth >= limit || idx.len() < 2 {
        return at;
    }
    let d = x[0].len();
    let f = g.random_range(0..d);
    let (lo, hi) =
        idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| (lo.min(x[i][f]), hi.max(x[i][f])));
    if lo >= hi {
        return at;
    }
    let threshold = g.random_range(lo..hi);
    let (li, ri): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][f] < threshold);
    let left = grow(x, li, depth + 1, limit, g, nodes);
    let right = grow(x, ri, depth + 1, limit, g, nodes);
    nodes[at] = INode::Split { feature: f, threshold, left, right };
    at
}

pub fn fit_isolation_forest(x: &[Vec<f64>], cfg: &IsolationConfig) -> Result<IsolationForestModel> {
    if x.len() < 2 {
        return Err(Error::invalid(format!("isolation forest needs at least 2 rows, got {}", x.len())));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("rows must share a nonzero length"));
    }
    if cfg.n_trees == 0 || cfg.subsample < 2 {
        return Err(Error::invalid("n_trees must be positive and subsample at least 2"));
    }
    let psi = cfg.subsample.min(x.len());
    let limit = (psi as f64).log2().ceil() as usize;
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut g = rng::seeded(rng::derive_seed(cfg.seed, t as u64));
            let idx = sample(&mut g, x.len(), psi).into_vec();
            let mut nodes = Vec::new();
            grow(x, idx, 0, limit, &mut g, &mut nodes);
            ITree { nodes }
        })
        .collect();
    Ok(IsolationForestModel { trees, subsample_size: psi, n_features: d })
}

fn path_length(tree: &ITree, x: &[f64]) -> f64 {
    let mut at = 0;
    let mut depth = 0.0;
    loop {
        match &tree.nodes[at] {
            INode::Split { feature, threshold, left, right } => {
                at = if x[*feature] < *threshold { *left } else { *right };
                depth += 1.0;
            }
            INode::Leaf { size } => return depth + average_path_length(*size),
        }
    }
}

/// `2^(-E[h(x)] / c(psi))`; larger means more anomalous.
pub fn anomaly_score(model: &IsolationForestModel, x: &[f64]) -> f64 {
    let mean = model.trees.iter().map(|t| path_length(t, x)).sum::<f64>() / model.trees.len() as f64;
    let c = average_path_length(model.subsample_size);
    if c == 0.0 {
        return 1.0;
    }
    2f64.powf(-mean / c)
}

impl ITree {
    pub fn height(&self) -> usize {
        fn walk(t: &ITree, at: usize) -> usize {
            match &t.nodes[at] {
                INode::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
                INode::Leaf { .. } => 0,
            }
        }
        walk(self, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn cluster(n: usize) -> Vec<Vec<f64>> {
        let mut g = rng::seeded(4);
        (0..n)
            .map(|_| vec![0.1 * g.sample::<f64, _>(StandardNormal), 0.1 * g.sample::<f64, _>(StandardNormal)])
            .collect()
    }

    #[test]
    fn outlier_scores_highest() {
        let mut x = cluster(100);
        x.push(vec![10.0, -10.0]);
        let m = fit_isolation_forest(&x, &IsolationConfig::default()).unwrap();
        let outlier = anomaly_score(&m, &x[100]);
        assert!(x[..100].iter().all(|p| anomaly_score(&m, p) < outlier));
    }

    #[test]
    fn scores_in_unit_interval_and_duplicates_tie() {
        let x = cluster(50);
        let m = fit_isolation_forest(&x, &IsolationConfig { n_trees: 30, ..Default::default() }).unwrap();
        for p in x.iter().chain([&vec![100.0, 100.0], &vec![-3.0, 0.0]]) {
            let s = anomaly_score(&m, p);
            assert!(s > 0.0 && s <= 1.0);
        }
        assert_eq!(anomaly_score(&m, &[0.05, 0.05]), anomaly_score(&m, &[0.05, 0.05]));
    }

    #[test]
    fn heights_bounded() {
        let x = cluster(300);
        let m = fit_isolation_forest(&x, &IsolationConfig { n_trees: 20, subsample: 64, seed: 2 }).unwrap();
        assert!(m.trees.iter().all(|t| t.height() <= 6));
    }

    #[test]
    fn normalizer_values() {
        assert_eq!(average_path_length(2), 1.0);
        assert!((average_path_length(256) - 10.244_770).abs() < 1e-5);
    }

    #[test]
    fn too_few_rows_rejected() {
        assert!(fit_isolation_forest(&[vec![1.0]], &IsolationConfig::default()).is_err());
    }
}

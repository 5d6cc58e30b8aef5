//! Per-datum uncertainty features from an MC run: the softmax baselines
//! (max probability, predictive entropy, mutual information) and, per
//! layer, the maximum pairwise distance between embedding samples.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bnn::{MCRun, Network};
use crate::data::{Dataset, FeatureTable};
use crate::error::{Error, Result};
use crate::numerics::{dot, Tensor};
use crate::rng;

/// Shift added to every embedding coordinate before cosine distance so
/// zero-norm embeddings stay well defined.
pub const COSINE_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Euclidean,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" | "cos" => Ok(Metric::Cosine),
            "euclidean" | "euclid" => Ok(Metric::Euclidean),
            other => Err(Error::invalid(format!("unknown metric '{other}' (expected cosine or euclidean)"))),
        }
    }
}

/// Which columns a detector sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSet {
    /// The three softmax baselines.
    Last,
    /// Baselines plus one spread value per layer.
    LastPlusSpread,
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureSet::Last => "Last",
            FeatureSet::LastPlusSpread => "Last+Spread",
        })
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "last" => Ok(FeatureSet::Last),
            "last+spread" | "lastplusspread" | "last_plus_spread" | "spread" => Ok(FeatureSet::LastPlusSpread),
            other => Err(Error::invalid(format!("unknown feature set '{other}' (expected last or last+spread)"))),
        }
    }
}

fn check_len(op: &'static str, u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() || u.is_empty() {
        return Err(Error::ShapeMismatch { op, expected: vec![u.len()], found: vec![v.len()] });
    }
    Ok(())
}

/// `1 - cos(u + eps, v + eps)`, in `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_len("cosine_distance", u, v)?;
    Ok(cosine_unchecked(u, v))
}

fn cosine_unchecked(u: &[f64], v: &[f64]) -> f64 {
    let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        let (a, b) = (a + COSINE_EPS, b + COSINE_EPS);
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    (1.0 - uv / (uu.sqrt() * vv.sqrt())).clamp(0.0, 2.0)
}

pub fn euclidean_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_len("euclidean_distance", u, v)?;
    Ok(euclidean_unchecked(u, v))
}

fn euclidean_unchecked(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Largest distance over all unordered pairs of rows of a `T x d` matrix.
pub fn max_pairwise_distance(samples: &Tensor, metric: Metric) -> Result<f64> {
    let t = samples.rows();
    if samples.rank() != 2 || t < 2 {
        return Err(Error::invalid(format!(
            "pairwise distances need a matrix with at least 2 rows, got shape {:?}",
            samples.shape()
        )));
    }
    let dist = match metric {
        Metric::Cosine => cosine_unchecked,
        Metric::Euclidean => euclidean_unchecked,
    };
    let mut best = 0.0f64;
    for i in 0..t {
        for j in i + 1..t {
            best = best.max(dist(samples.row(i), samples.row(j)));
        }
    }
    Ok(best)
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

fn mean_row(samples: &Tensor) -> Vec<f64> {
    let mut mean = vec![0.0; samples.cols()];
    for row in samples.row_iter() {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    let t = samples.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= t);
    mean
}

/// Entropy (natural log) of the mean of the sampled distributions.
pub fn predictive_entropy(softmax_samples: &Tensor) -> f64 {
    entropy(&mean_row(softmax_samples))
}

/// Mutual information estimate together with whether it had to be clamped
/// up from a small negative value.
pub fn mutual_information_checked(softmax_samples: &Tensor) -> (f64, bool) {
    let expected_entropy = softmax_samples.row_iter().map(entropy).sum::<f64>() / softmax_samples.rows() as f64;
    let mi = predictive_entropy(softmax_samples) - expected_entropy;
    if mi < 0.0 {
        (0.0, true)
    } else {
        (mi, false)
    }
}

/// Predictive entropy minus mean per-sample entropy, floored at 0.
pub fn mutual_information(softmax_samples: &Tensor) -> f64 {
    mutual_information_checked(softmax_samples).0
}

/// Largest coordinate of the mean distribution.
pub fn max_softmax_prob(softmax_samples: &Tensor) -> f64 {
    mean_row(softmax_samples).into_iter().fold(0.0, f64::max)
}

/// Mean Euclidean norm of the rows.
pub fn mean_embedding_norm(samples: &Tensor) -> f64 {
    samples.row_iter().map(|r| dot(r, r).sqrt()).sum::<f64>() / samples.rows() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub max_softmax: f64,
    pub pred_entropy: f64,
    pub mutual_info: f64,
    /// One value per layer; empty when spread was not requested.
    pub spread: Vec<f64>,
    pub mean_embed_norm: Vec<f64>,
    pub metric: Metric,
    /// The raw mutual information estimate was negative and clamped to 0.
    pub mi_clamped: bool,
}

pub const BASELINE_COLUMNS: [&str; 3] = ["max_softmax", "mutual_info", "pred_entropy"];

impl FeatureVector {
    /// Values in column order: max softmax, MI, entropy, spreads, then
    /// norms when `with_norms`.
    pub fn to_row(&self, with_norms: bool) -> Vec<f64> {
        let mut row = vec![self.max_softmax, self.mutual_info, self.pred_entropy];
        row.extend(&self.spread);
        if with_norms {
            row.extend(&self.mean_embed_norm);
        }
        row
    }
}

/// Column names matching [`FeatureVector::to_row`].
pub fn column_names(n_spread: usize, n_norms: usize) -> Vec<String> {
    let mut cols: Vec<String> = BASELINE_COLUMNS.iter().map(|s| s.to_string()).collect();
    cols.extend((1..=n_spread).map(|i| format!("spread_{i}")));
    cols.extend((1..=n_norms).map(|i| format!("norm_{i}")));
    cols
}

pub fn extract_features(run: &MCRun, metric: Metric, include_spread: bool) -> Result<FeatureVector> {
    let probs = &run.softmax_samples;
    let (mutual_info, mi_clamped) = mutual_information_checked(probs);
    let spread = if include_spread {
        run.layer_embeddings.iter().map(|e| max_pairwise_distance(e, metric)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(FeatureVector {
        max_softmax: max_softmax_prob(probs),
        pred_entropy: predictive_entropy(probs),
        mutual_info,
        spread,
        mean_embed_norm: run.layer_embeddings.iter().map(mean_embedding_norm).collect(),
        metric,
        mi_clamped,
    })
}

/// Settings for computing features over a whole dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub samples: usize,
    pub metric: Metric,
    pub include_spread: bool,
    pub include_norms: bool,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            samples: crate::bnn::DEFAULT_MC_SAMPLES,
            metric: Metric::Cosine,
            include_spread: true,
            include_norms: false,
            seed: 0,
        }
    }
}

/// MC-samples every datum (each with its own derived seed, so the result
/// does not depend on scheduling) and extracts its features.
pub fn dataset_features(net: &Network, data: &Dataset, cfg: &FeatureConfig) -> Result<Vec<FeatureVector>> {
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let mut g = rng::seeded(rng::derive_seed(cfg.seed, i as u64));
            let run = net.mc_sample(&data.input(i), cfg.samples, &mut g)?;
            extract_features(&run, cfg.metric, cfg.include_spread)
        })
        .collect()
}

/// Raw MC runs for every datum, seeded exactly as [`dataset_features`].
pub fn mc_runs(net: &Network, data: &Dataset, samples: usize, seed: u64) -> Result<Vec<MCRun>> {
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let mut g = rng::seeded(rng::derive_seed(seed, i as u64));
            net.mc_sample(&data.input(i), samples, &mut g)
        })
        .collect()
}

/// Feature rows for a dataset, ready to be written as CSV. The dataset's
/// class labels fill the label column.
pub fn feature_table(net: &Network, data: &Dataset, cfg: &FeatureConfig) -> Result<FeatureTable> {
    let feats = dataset_features(net, data, cfg)?;
    let n_layers = net.n_embeddings();
    let columns =
        column_names(if cfg.include_spread { n_layers } else { 0 }, if cfg.include_norms { n_layers } else { 0 });
    let rows = feats.iter().map(|f| f.to_row(cfg.include_norms)).collect();
    FeatureTable::new(columns, rows, data.labels().to_vec())
}

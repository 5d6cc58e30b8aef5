//! Small numerical studies: how dropout inflates embedding-norm variance,
//! how the uncertainty features correlate on random embeddings, whether
//! spread tracks embedding norm on a trained model, softmax properties, and
//! the closed-form dropout variance against Monte Carlo.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bnn::{dropout_mask, embedding_component_variance, MCRun};
use crate::error::{Error, Result};
use crate::features::{
    max_pairwise_distance, max_softmax_prob, mean_embedding_norm, mutual_information, predictive_entropy, Metric,
};
use crate::numerics::{softmax, softmax_slice, Tensor};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Embedding dimension D of the random matrices.
    pub embed_dim: usize,
    /// Dropout samples B per random matrix.
    pub samples: usize,
    pub iterations: usize,
    /// Width of the two-layer network in the norm study.
    pub hidden: usize,
    /// Dropout draws per placement in the norm study.
    pub draws: usize,
    pub drop_prob: f64,
    /// Correlation between embedding dims i and j is `rho^|i-j|`.
    pub rho: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            embed_dim: 10,
            samples: 32,
            iterations: 1000,
            hidden: 100,
            draws: 10_000,
            drop_prob: 0.5,
            rho: 0.9,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.embed_dim < 2 {
            problems.push(format!("embed_dim must be at least 2, got {}", self.embed_dim));
        }
        if self.samples < 2 {
            problems.push(format!("samples must be at least 2, got {}", self.samples));
        }
        if self.iterations < 1 {
            problems.push("iterations must be at least 1".to_string());
        }
        if self.hidden < 1 || self.draws < 2 {
            problems.push("hidden must be positive and draws at least 2".to_string());
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            problems.push(format!("drop_prob must lie in [0, 1), got {}", self.drop_prob));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            problems.push(format!("rho must lie in (-1, 1), got {}", self.rho));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(problems.join("; ")))
        }
    }
}

fn gaussian(g: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| g.sample(StandardNormal)).collect()
}

/// Running mean and population variance (Welford), exact for constant input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub variance: f64,
    #[serde(skip)]
    count: usize,
    #[serde(skip)]
    m2: f64,
}

impl NormStats {
    fn push(&mut self, v: f64) {
        self.count += 1;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
        self.variance = self.m2 / self.count as f64;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Layer1Only,
    Layer2Only,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRow {
    pub placement: Placement,
    pub layer1: NormStats,
    pub layer2: NormStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub config: SimConfig,
    pub rows: Vec<NormRow>,
}

impl NormReport {
    pub fn row(&self, placement: Placement) -> &NormRow {
        self.rows.iter().find(|r| r.placement == placement).expect("all placements present")
    }
}

fn relu_matvec(w: &[f64], x: &[f64], out: usize) -> Vec<f64> {
    let n = x.len();
    (0..out).map(|j| w[j * n..(j + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum::<f64>().max(0.0)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Two bias-free ReLU layers with standard-normal weights and input.
/// For each dropout placement, `draws` masks are sampled and the norms of
/// both hidden layers are summarized.
pub fn sim_embedding_norms(cfg: &SimConfig) -> Result<NormReport> {
    cfg.validate()?;
    let h = cfg.hidden;
    let mut g = rng::seeded(cfg.seed);
    let w1 = gaussian(&mut g, h * h);
    let w2 = gaussian(&mut g, h * h);
    let x = gaussian(&mut g, h);
    let placements = [Placement::Layer1Only, Placement::Layer2Only, Placement::Both];
    let rows = placements
        .iter()
        .enumerate()
        .map(|(k, &placement)| -> Result<NormRow> {
            let mut g = rng::seeded(rng::derive_seed(cfg.seed, k as u64 + 1));
            let (mut l1, mut l2) = (NormStats::default(), NormStats::default());
            let on1 = placement != Placement::Layer2Only;
            let on2 = placement != Placement::Layer1Only;
            for _ in 0..cfg.draws {
                let xin: Vec<f64> = if on1 {
                    let m = dropout_mask(h, cfg.drop_prob, &mut g)?;
                    x.iter().zip(m.data()).map(|(a, b)| a * b).collect()
                } else {
                    x.clone()
                };
                let h1 = relu_matvec(&w1, &xin, h);
                let h1in: Vec<f64> = if on2 {
                    let m = dropout_mask(h, cfg.drop_prob, &mut g)?;
                    h1.iter().zip(m.data()).map(|(a, b)| a * b).collect()
                } else {
                    h1.clone()
                };
                let h2 = relu_matvec(&w2, &h1in, h);
                l1.push(norm(&h1));
                l2.push(norm(&h2));
            }
            Ok(NormRow { placement, layer1: l1, layer2: l2 })
        })
        .collect::<Result<_>>()?;
    Ok(NormReport { config: cfg.clone(), rows })
}

pub const CORRELATION_FEATURES: [&str; 6] =
    ["mutual_info", "pred_entropy", "max_softmax", "max_cos_pdist", "max_euclid_pdist", "mean_embed_norm"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub config: SimConfig,
    pub features: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

impl CorrelationReport {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.features.iter().position(|f| f == a)?;
        let j = self.features.iter().position(|f| f == b)?;
        Some(self.matrix[i][j])
    }
}

/// Lower-triangular Cholesky factor of `C_ij = rho^|i-j|`.
fn ar1_cholesky(d: usize, rho: f64) -> Vec<f64> {
    let c = |i: usize, j: usize| rho.powi((i as i32 - j as i32).abs());
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            l[i * d + j] = if i == j { (c(i, i) - s).sqrt() } else { (c(i, j) - s) / l[j * d + j] };
        }
    }
    l
}

fn correlated(l: &[f64], d: usize, g: &mut Rng) -> Vec<f64> {
    let z = gaussian(g, d);
    (0..d).map(|i| (0..=i).map(|k| l[i * d + k] * z[k]).sum()).collect()
}

/// Pearson correlation; 0 when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Six uncertainty features of one random `D x B` embedding matrix whose
/// columns are dropout samples. Each iteration draws a correlated mean
/// embedding, a scale and a noise level, so norm and dispersion vary
/// independently across iterations. The softmax features use the softmax
/// of each column.
fn random_matrix_features(cfg: &SimConfig, l: &[f64], iteration: usize) -> Result<[f64; 6]> {
    let (d, b) = (cfg.embed_dim, cfg.samples);
    let mut g = rng::seeded(rng::derive_seed(cfg.seed, iteration as u64));
    let mu = correlated(l, d, &mut g);
    let scale = g.random_range(0.5..3.0);
    let noise = g.random_range(0.05..0.5);
    let mut emb = Vec::with_capacity(b * d);
    let mut probs = Vec::with_capacity(b * d);
    for _ in 0..b {
        let eps = correlated(l, d, &mut g);
        let col: Vec<f64> = mu.iter().zip(&eps).map(|(m, e)| scale * (m + noise * e)).collect();
        probs.extend(softmax_slice(&col, 1.0));
        emb.extend(col);
    }
    let emb = Tensor::matrix(b, d, emb)?;
    let probs = Tensor::matrix(b, d, probs)?;
    Ok([
        mutual_information(&probs),
        predictive_entropy(&probs),
        max_softmax_prob(&probs),
        max_pairwise_distance(&emb, Metric::Cosine)?,
        max_pairwise_distance(&emb, Metric::Euclidean)?,
        mean_embedding_norm(&emb),
    ])
}

/// Pearson correlation of the six features across `iterations` random
/// embedding matrices.
pub fn sim_feature_correlations(cfg: &SimConfig) -> Result<CorrelationReport> {
    cfg.validate()?;
    if cfg.iterations < 2 {
        return Err(Error::invalid("correlations need at least 2 iterations"));
    }
    let l = ar1_cholesky(cfg.embed_dim, cfg.rho);
    let rows: Vec<[f64; 6]> =
        (0..cfg.iterations).into_par_iter().map(|i| random_matrix_features(cfg, &l, i)).collect::<Result<_>>()?;
    let cols: Vec<Vec<f64>> = (0..6).map(|k| rows.iter().map(|r| r[k]).collect()).collect();
    let matrix =
        (0..6).map(|i| (0..6).map(|j| if i == j { 1.0 } else { pearson(&cols[i], &cols[j]) }).collect()).collect();
    Ok(CorrelationReport {
        config: cfg.clone(),
        features: CORRELATION_FEATURES.iter().map(|s| s.to_string()).collect(),
        matrix,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolFit {
    pub name: String,
    /// `(mean embedding norm, max pairwise distance)` per datum.
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub pearson_r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfoundingReport {
    /// Zero-based embedding layer.
    pub layer: usize,
    pub metric: Metric,
    pub pools: Vec<PoolFit>,
}

fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    (slope, my - slope * mx)
}

/// Scatter of mean embedding norm against spread at `layer` for each named
/// pool of MC runs, with a least-squares line and Pearson r per pool.
pub fn norm_confounding_diagnostic(
    pools: &[(&str, &[MCRun])],
    layer: usize,
    metric: Metric,
) -> Result<ConfoundingReport> {
    let pools = pools
        .iter()
        .map(|(name, runs)| -> Result<PoolFit> {
            if runs.is_empty() {
                return Err(Error::InsufficientData(format!("pool '{name}' has no runs")));
            }
            let points = runs
                .iter()
                .map(|run| {
                    let emb = run.layer_embeddings.get(layer).ok_or_else(|| {
                        Error::invalid(format!("layer {layer} out of range ({} layers)", run.layer_embeddings.len()))
                    })?;
                    Ok((mean_embedding_norm(emb), max_pairwise_distance(emb, metric)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let (slope, intercept) = least_squares(&points);
            let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
            Ok(PoolFit { name: name.to_string(), pearson_r: pearson(&xs, &ys), points, slope, intercept })
        })
        .collect::<Result<_>>()?;
    Ok(ConfoundingReport { layer, metric, pools })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxReport {
    pub trials: usize,
    pub seed: u64,
    /// Largest `|softmax(x + K) - softmax(x)|` entry.
    pub translation_max_deviation: f64,
    /// Share of trials where `softmax(x / a)` differs from `softmax(x)`.
    pub scaling_changed_fraction: f64,
    /// Share of trials where the argmax weight falls as temperature rises.
    pub temperature_monotone_fraction: f64,
    /// Largest deviation from uniform for constant inputs.
    pub constant_max_deviation: f64,
}

/// Randomized checks of softmax translation invariance, scaling
/// sensitivity, temperature monotonicity and the constant-input case.
pub fn softmax_property_report(trials: usize, seed: u64) -> Result<SoftmaxReport> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let mut g = rng::seeded(seed);
    let mut translation: f64 = 0.0;
    let mut constant: f64 = 0.0;
    let (mut scaled, mut monotone) = (0usize, 0usize);
    let max_dev =
        |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    for _ in 0..trials {
        let d = g.random_range(2..12);
        let x = Tensor::vector(gaussian(&mut g, d));
        let base = softmax(&x, 1.0)?;

        let k = g.random_range(-100.0..100.0);
        let shifted = Tensor::vector(x.data().iter().map(|v| v + k).collect());
        translation = translation.max(max_dev(&softmax(&shifted, 1.0)?, &base));

        let alpha = if g.random::<bool>() { g.random_range(1.5..10.0) } else { g.random_range(0.1..0.67) };
        if max_dev(&softmax(&x, alpha)?, &base) > 0.0 {
            scaled += 1;
        }

        let arg = (0..d).fold(0, |best, i| if x.data()[i] > x.data()[best] { i } else { best });
        let (a1, a2) = (g.random_range(0.1..2.0), g.random_range(2.0..20.0));
        if softmax(&x, a1)?.data()[arg] >= softmax(&x, a2)?.data()[arg] {
            monotone += 1;
        }

        let c = g.random_range(-50.0..50.0);
        let flat = Tensor::vector(vec![c; d]);
        for alpha in [0.01, 0.5, 1.0, 3.0, 100.0] {
            let p = softmax(&flat, alpha)?;
            constant = constant.max(p.data().iter().map(|v| (v - 1.0 / d as f64).abs()).fold(0.0, f64::max));
        }
    }
    Ok(SoftmaxReport {
        trials,
        seed,
        translation_max_deviation: translation,
        scaling_changed_fraction: scaled as f64 / trials as f64,
        temperature_monotone_fraction: monotone as f64 / trials as f64,
        constant_max_deviation: constant,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceCase {
    pub keep_prob: f64,
    pub closed_form: Vec<f64>,
    pub monte_carlo: Vec<f64>,
    pub standard_error: Vec<f64>,
    /// `|closed_form - monte_carlo| / standard_error`.
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub draws: usize,
    pub seed: u64,
    pub cases: Vec<VarianceCase>,
}

/// Compares [`embedding_component_variance`] with the sample variance of
/// `w · (D ⊙ x)` over `draws` unscaled Bernoulli masks. Each case is one
/// embedding component: a random weight row, input and keep probability.
/// The standard error of a sample variance is estimated from the sample
/// fourth central moment.
pub fn variance_check(cases: usize, draws: usize, seed: u64) -> Result<VarianceReport> {
    if cases == 0 || draws < 4 {
        return Err(Error::invalid("need at least one case and four draws"));
    }
    let cases = (0..cases)
        .into_par_iter()
        .map(|c| -> Result<VarianceCase> {
            let mut g = rng::seeded(rng::derive_seed(seed, c as u64));
            let (out, inp) = (1, g.random_range(2..9));
            let w = Tensor::matrix(out, inp, gaussian(&mut g, out * inp))?;
            let x = Tensor::vector(gaussian(&mut g, inp));
            let keep_prob = g.random_range(0.1..0.95);
            let closed = embedding_component_variance(&w, &x, keep_prob)?.into_data();
            let mut samples = vec![Vec::with_capacity(draws); out];
            let mut masked = vec![0.0; inp];
            for _ in 0..draws {
                for (m, xi) in masked.iter_mut().zip(x.data()) {
                    *m = if g.random::<f64>() < keep_prob { *xi } else { 0.0 };
                }
                for (j, s) in samples.iter_mut().enumerate() {
                    s.push(w.row(j).iter().zip(&masked).map(|(a, b)| a * b).sum::<f64>());
                }
            }
            let n = draws as f64;
            let (mut mc, mut se) = (Vec::new(), Vec::new());
            for s in &samples {
                let mean = s.iter().sum::<f64>() / n;
                let m2 = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let m4 = s.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
                mc.push(m2 * n / (n - 1.0));
                se.push(((m4 - m2 * m2).max(0.0) / n).sqrt());
            }
            let z = closed
                .iter()
                .zip(&mc)
                .zip(&se)
                .map(|((c, m), s)| {
                    if *s > 0.0 {
                        (c - m).abs() / s
                    } else if c == m {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                })
                .fold(0.0, f64::max);
            Ok(VarianceCase { keep_prob, closed_form: closed, monte_carlo: mc, standard_error: se, z })
        })
        .collect::<Result<_>>()?;
    Ok(VarianceReport { draws, seed, cases })
}

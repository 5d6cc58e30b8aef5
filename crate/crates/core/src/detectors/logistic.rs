use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::dot;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// L2 strength the model was fitted with.
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    /// Stop once the gradient's max-norm falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            lambda_grid: (-4..=4).map(|k| 10f64.powi(k)).collect(),
            folds: 3,
            seed: 0,
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

/// Optimizer record for a single-lambda fit.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticFit {
    pub model: LogisticModel,
    pub iterations: usize,
    /// Regularized objective after each accepted step (first entry is the start).
    pub losses: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn predict_proba_logistic(model: &LogisticModel, x: &[f64]) -> f64 {
    sigmoid(dot(&model.weights, x) + model.bias)
}

/// Mean log-loss plus `lambda / 2 * |w|^2` (bias unpenalized).
pub fn regularized_loss(weights: &[f64], bias: f64, x: &[Vec<f64>], y: &[usize], lambda: f64) -> f64 {
    let data: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &label)| {
            let z = dot(weights, row) + bias;
            if label == 1 {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum::<f64>()
        / x.len() as f64;
    data + 0.5 * lambda * dot(weights, weights)
}

fn gradient(weights: &[f64], bias: f64, x: &[Vec<f64>], y: &[usize], lambda: f64) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut gw: Vec<f64> = weights.iter().map(|w| lambda * w).collect();
    let mut gb = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let r = (sigmoid(dot(weights, row) + bias) - label as f64) / n;
        gb += r;
        gw.iter_mut().zip(row).for_each(|(g, v)| *g += r * v);
    }
    (gw, gb)
}

fn check_xy(x: &[Vec<f64>], y: &[usize]) -> Result<usize> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::invalid(format!("{} rows but {} labels", x.len(), y.len())));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("rows have differing lengths"));
    }
    if y.iter().any(|&l| l > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    if !y.contains(&0) || !y.contains(&1) {
        return Err(Error::invalid("both classes must be present"));
    }
    Ok(d)
}

/// Full-batch gradient descent with backtracking (Armijo) steps, so the
/// objective never increases. Each coordinate's step is scaled by the
/// inverse of its curvature bound (`mean(x_k^2) / 4 + lambda` for weights,
/// `1/4` for the bias), which keeps strongly regularized fits from stalling.
pub fn fit_logistic_fixed(x: &[Vec<f64>], y: &[usize], lambda: f64, tol: f64, max_iter: usize) -> Result<LogisticFit> {
    let d = check_xy(x, y)?;
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    let n = x.len() as f64;
    let precond: Vec<f64> =
        (0..d).map(|k| 1.0 / (x.iter().map(|r| r[k] * r[k]).sum::<f64>() / (4.0 * n) + lambda).max(1e-12)).collect();
    let precond_b = 4.0;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut loss = regularized_loss(&w, b, x, y, lambda);
    let mut losses = vec![loss];
    let mut step: f64 = 1.0;
    let mut iterations = 0;
    let done = |w: Vec<f64>, b: f64, iterations: usize, losses: Vec<f64>| {
        Ok(LogisticFit { model: LogisticModel { weights: w, bias: b, lambda }, iterations, losses })
    };
    while iterations < max_iter {
        let (gw, gb) = gradient(&w, b, x, y, lambda);
        let gmax = gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()));
        if gmax < tol {
            break;
        }
        let dw: Vec<f64> = gw.iter().zip(&precond).map(|(g, p)| g * p).collect();
        let db = gb * precond_b;
        let decrease = dot(&gw, &dw) + gb * db;
        step = (step * 2.0).min(1.0);
        loop {
            let nw: Vec<f64> = w.iter().zip(&dw).map(|(wi, di)| wi - step * di).collect();
            let nb = b - step * db;
            let nl = regularized_loss(&nw, nb, x, y, lambda);
            if nl <= loss - 0.5 * step * decrease {
                w = nw;
                b = nb;
                loss = nl;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                // no representable decrease left
                return done(w, b, iterations, losses);
            }
        }
        losses.push(loss);
        iterations += 1;
    }
    done(w, b, iterations, losses)
}

/// Fold index per row. Each class is shuffled with the seed and dealt
/// round-robin, so every fold's class counts are within one of the
/// proportional share.
pub fn stratified_folds(y: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let mut g = rng::seeded(seed);
    let mut fold = vec![0; y.len()];
    let mut offset = 0;
    let classes = y.iter().max().map_or(0, |m| m + 1);
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        idx.shuffle(&mut g);
        for (j, &i) in idx.iter().enumerate() {
            fold[i] = (j + offset) % k;
        }
        offset += idx.len();
    }
    fold
}

fn mean_log_loss(model: &LogisticModel, x: &[Vec<f64>], y: &[usize]) -> f64 {
    regularized_loss(&model.weights, model.bias, x, y, 0.0)
}

/// Picks lambda by k-fold stratified cross-validation on mean validation
/// log-loss (ties go to the earlier grid entry), then refits on all rows.
pub fn fit_logistic(x: &[Vec<f64>], y: &[usize], cfg: &LogisticConfig) -> Result<LogisticModel> {
    check_xy(x, y)?;
    if cfg.lambda_grid.is_empty() {
        return Err(Error::invalid("lambda grid is empty"));
    }
    if cfg.folds < 2 || x.len() < cfg.folds {
        return Err(Error::invalid(format!(
            "{}-fold cross-validation needs at least {} rows, got {}",
            cfg.folds,
            cfg.folds,
            x.len()
        )));
    }
    let folds = stratified_folds(y, cfg.folds, cfg.seed);
    let mut best = (f64::INFINITY, cfg.lambda_grid[0]);
    for &lambda in &cfg.lambda_grid {
        let mut total = 0.0;
        let mut counted = 0;
        for f in 0..cfg.folds {
            let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for i in 0..x.len() {
                if folds[i] == f {
                    vx.push(x[i].clone());
                    vy.push(y[i]);
                } else {
                    tx.push(x[i].clone());
                    ty.push(y[i]);
                }
            }
            // a training split missing a class cannot be fitted; skip it
            let Ok(fit) = fit_logistic_fixed(&tx, &ty, lambda, cfg.tol, cfg.max_iter) else {
                continue;
            };
            if vx.is_empty() {
                continue;
            }
            total += mean_log_loss(&fit.model, &vx, &vy);
            counted += 1;
        }
        if counted > 0 {
            let mean = total / counted as f64;
            if mean < best.0 {
                best = (mean, lambda);
            }
        }
    }
    Ok(fit_logistic_fixed(x, y, best.1, cfg.tol, cfg.max_iter)?.model)
}

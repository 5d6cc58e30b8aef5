//! Downstream OOD classifiers over feature rows. Class 1 is OOD throughout.

mod forest;
mod isolation;
mod logistic;
mod scaler;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use forest::{fit_random_forest, gini_importances, predict_proba_forest, Forest, ForestConfig, Node, Tree};
pub use isolation::{
    anomaly_score, average_path_length, fit_isolation_forest, INode, ITree, IsolationConfig, IsolationForestModel,
};
pub use logistic::{
    fit_logistic, fit_logistic_fixed, predict_proba_logistic, regularized_loss, stratified_folds, LogisticConfig,
    LogisticFit, LogisticModel,
};
pub use scaler::MinMaxScaler;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Lr,
    Rf,
    If,
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorKind::Lr => "lr",
            DetectorKind::Rf => "rf",
            DetectorKind::If => "if",
        })
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" | "logistic" => Ok(DetectorKind::Lr),
            "rf" | "forest" => Ok(DetectorKind::Rf),
            "if" | "isolation" => Ok(DetectorKind::If),
            other => Err(Error::invalid(format!("unknown detector '{other}' (expected lr, rf or if)"))),
        }
    }
}

/// Anything that maps a feature row to an OOD score in `[0, 1]`.
pub trait Scorer: Send + Sync {
    fn score(&self, x: &[f64]) -> f64;
}

/// Hyperparameters for all detector kinds; only the relevant block is used.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub logistic: LogisticConfig,
    pub forest: ForestConfig,
    pub isolation: IsolationConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SavedDetector {
    Logistic { scaler: MinMaxScaler, model: LogisticModel },
    Forest { forest: Forest },
    Isolation { model: IsolationForestModel },
}

impl SavedDetector {
    pub fn kind(&self) -> DetectorKind {
        match self {
            SavedDetector::Logistic { .. } => DetectorKind::Lr,
            SavedDetector::Forest { .. } => DetectorKind::Rf,
            SavedDetector::Isolation { .. } => DetectorKind::If,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            SavedDetector::Logistic { scaler, .. } => scaler.n_features(),
            SavedDetector::Forest { forest } => forest.n_features,
            SavedDetector::Isolation { model } => model.n_features,
        }
    }

    pub fn forest(&self) -> Option<&Forest> {
        match self {
            SavedDetector::Forest { forest } => Some(forest),
            _ => None,
        }
    }
}

impl Scorer for SavedDetector {
    fn score(&self, x: &[f64]) -> f64 {
        match self {
            SavedDetector::Logistic { scaler, model } => match scaler.transform_row(x) {
                Ok(z) => predict_proba_logistic(model, &z),
                Err(_) => f64::NAN,
            },
            SavedDetector::Forest { forest } => predict_proba_forest(forest, x),
            SavedDetector::Isolation { model } => anomaly_score(model, x),
        }
    }
}

/// Fits a detector of `kind`. Sub-seeds for CV folds and tree bagging are
/// derived from `seed`. The isolation forest is unsupervised and only sees
/// the label-0 (in-distribution) rows.
pub fn fit_detector(
    kind: DetectorKind,
    x: &[Vec<f64>],
    y: &[usize],
    cfg: &DetectorConfig,
    seed: u64,
) -> Result<SavedDetector> {
    match kind {
        DetectorKind::Lr => {
            let scaler = MinMaxScaler::fit(x)?;
            let z = scaler.transform(x)?;
            let lc = LogisticConfig { seed: rng::derive_seed(seed, 0), ..cfg.logistic.clone() };
            Ok(SavedDetector::Logistic { model: fit_logistic(&z, y, &lc)?, scaler })
        }
        DetectorKind::Rf => {
            let fc = ForestConfig { seed: rng::derive_seed(seed, 1), ..cfg.forest.clone() };
            Ok(SavedDetector::Forest { forest: fit_random_forest(x, y, &fc)? })
        }
        DetectorKind::If => {
            if x.len() != y.len() {
                return Err(Error::invalid(format!("{} rows but {} labels", x.len(), y.len())));
            }
            let inliers: Vec<Vec<f64>> = x.iter().zip(y).filter(|(_, &l)| l == 0).map(|(r, _)| r.clone()).collect();
            let ic = IsolationConfig { seed: rng::derive_seed(seed, 2), ..cfg.isolation.clone() };
            Ok(SavedDetector::Isolation { model: fit_isolation_forest(&inliers, &ic)? })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_parses_and_displays() {
        for k in [DetectorKind::Lr, DetectorKind::Rf, DetectorKind::If] {
            assert_eq!(k.to_string().parse::<DetectorKind>().unwrap(), k);
        }
        assert!("svm".parse::<DetectorKind>().is_err());
    }

    #[test]
    fn every_kind_separates_shifted_rows() {
        let x: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let base = if i % 2 == 0 { 0.0 } else { 5.0 };
                vec![base + (i as f64 * 0.31).sin() * 0.3, base + (i as f64 * 0.17).cos() * 0.3]
            })
            .collect();
        let y: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let cfg = DetectorConfig {
            forest: ForestConfig { n_trees: 25, ..Default::default() },
            isolation: IsolationConfig { n_trees: 50, ..Default::default() },
            ..Default::default()
        };
        for kind in [DetectorKind::Lr, DetectorKind::Rf, DetectorKind::If] {
            let det = fit_detector(kind, &x, &y, &cfg, 7).unwrap();
            assert_eq!(det.kind(), kind);
            assert!(det.score(&[5.0, 5.0]) > det.score(&[0.0, 0.0]), "{kind}");
        }
    }

    #[test]
    fn saved_detector_json_round_trip() {
        let x = vec![vec![0.0], vec![1.0], vec![0.1], vec![0.9]];
        let y = vec![0, 1, 0, 1];
        let cfg = DetectorConfig { forest: ForestConfig { n_trees: 3, ..Default::default() }, ..Default::default() };
        let det = fit_detector(DetectorKind::Rf, &x, &y, &cfg, 1).unwrap();
        let back: SavedDetector = serde_json::from_str(&serde_json::to_string(&det).unwrap()).unwrap();
        assert_eq!(back, det);
    }
}

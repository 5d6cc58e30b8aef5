//! OOD metrics and the repeated-subsampling experiment protocol. OOD is the
//! positive class (label 1) everywhere.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureTable;
use crate::detectors::{fit_detector, gini_importances, DetectorConfig, DetectorKind, SavedDetector, Scorer};
use crate::error::{Error, Result};
use crate::features::{FeatureSet, Metric, BASELINE_COLUMNS};
use crate::rng;

fn check_binary(scores: &[f64], labels: &[usize]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from average ranks in O(n log n).
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("AUC needs both positive and negative labels"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("AUC scores contain NaN"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; tied block i..=j shares their average
        let avg = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Fraction of items where `prob >= 0.5` agrees with the label.
pub fn accuracy_at_half(probs: &[f64], labels: &[usize]) -> Result<f64> {
    check_binary(probs, labels)?;
    if probs.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let correct = probs.iter().zip(labels).filter(|(&p, &l)| usize::from(p >= 0.5) == l).count();
    Ok(correct as f64 / probs.len() as f64)
}

/// Share of OOD items with `prob >= 0.5`.
pub fn recall_ood(probs: &[f64], labels: &[usize]) -> Result<f64> {
    let (pos, _) = check_binary(probs, labels)?;
    if pos == 0 {
        return Err(Error::invalid("recall needs at least one OOD label"));
    }
    let hits = probs.iter().zip(labels).filter(|(&p, &l)| l == 1 && p >= 0.5).count();
    Ok(hits as f64 / pos as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n_per_class: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub feature_set: FeatureSet,
    pub detector: DetectorKind,
    /// Distance the spread columns were computed with; recorded in reports.
    pub metric: Metric,
    pub detector_config: DetectorConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_per_class: 100,
            repetitions: 10,
            seed: 0,
            feature_set: FeatureSet::LastPlusSpread,
            detector: DetectorKind::Rf,
            metric: Metric::Cosine,
            detector_config: DetectorConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_per_class == 0 {
            problems.push("n_per_class must be positive".to_string());
        }
        if self.repetitions == 0 {
            problems.push("repetitions must be at least 1".to_string());
        }
        if self.detector_config.forest.n_trees == 0 {
            problems.push("forest n_trees must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(problems.join("; ")))
        }
    }
}

/// Columns a feature set uses, in table order.
pub fn feature_columns(columns: &[String], set: FeatureSet) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for base in BASELINE_COLUMNS {
        if !columns.iter().any(|c| c == base) {
            return Err(Error::invalid(format!("feature table lacks column '{base}'")));
        }
        out.push(base.to_string());
    }
    if set == FeatureSet::LastPlusSpread {
        let spread: Vec<String> = columns.iter().filter(|c| c.starts_with("spread_")).cloned().collect();
        if spread.is_empty() {
            return Err(Error::invalid("feature set last+spread needs spread_* columns"));
        }
        out.extend(spread);
    }
    Ok(out)
}

/// Row indices used by one repetition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub id_train: Vec<usize>,
    pub id_test: Vec<usize>,
    pub ood_train: Vec<usize>,
    /// Rows of the OOD-train pool not drawn for training.
    pub ood_train_rest: Vec<usize>,
}

/// Seeded draw of `n_per_class` rows from each pool; the rest of the
/// in-distribution pool becomes test data.
pub fn draw_split(n_id: usize, n_ood: usize, n_per_class: usize, seed: u64) -> Result<Split> {
    if n_id <= n_per_class || n_ood < n_per_class {
        return Err(Error::InsufficientData(format!(
            "need more than {n_per_class} in-distribution rows (have {n_id}) and at least {n_per_class} OOD training rows (have {n_ood})"
        )));
    }
    let mut g = rng::seeded(seed);
    let mut id: Vec<usize> = (0..n_id).collect();
    id.shuffle(&mut g);
    let mut ood: Vec<usize> = (0..n_ood).collect();
    ood.shuffle(&mut g);
    let id_test = id.split_off(n_per_class);
    let ood_rest = ood.split_off(n_per_class);
    Ok(Split { id_train: id, id_test, ood_train: ood, ood_train_rest: ood_rest })
}

/// Mean and spread of Gini importances across repetitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn importance_report(columns: &[String], importances: &[Vec<f64>]) -> Result<ImportanceReport> {
    if importances.is_empty() {
        return Err(Error::invalid("importance report needs at least one forest"));
    }
    if importances.iter().any(|v| v.len() != columns.len()) {
        return Err(Error::invalid("importance vectors do not match the column count"));
    }
    let (mean, std) =
        (0..columns.len()).map(|k| mean_std(&importances.iter().map(|v| v[k]).collect::<Vec<_>>())).unzip();
    Ok(ImportanceReport { columns: columns.to_vec(), mean, std })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detector: String,
    pub feature_set: FeatureSet,
    pub metric: Metric,
    pub n_per_class: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub columns: Vec<String>,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub auc: Vec<f64>,
    pub acc: Vec<f64>,
    pub recall: Vec<f64>,
    pub importances: Option<ImportanceReport>,
}

struct RepOutcome {
    auc: f64,
    acc: f64,
    recall: f64,
    importances: Option<Vec<f64>>,
}

/// A fitted scorer and, for forests, its Gini importances.
type Fitted = (Box<dyn Scorer>, Option<Vec<f64>>);

type FitFn<'a> = dyn Fn(&[Vec<f64>], &[usize], u64) -> Result<Fitted> + Sync + 'a;

fn gather(table: &FeatureTable, idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| table.rows()[i].clone()).collect()
}

fn run_protocol(
    id: &FeatureTable,
    ood_train: &FeatureTable,
    ood_test: Option<&FeatureTable>,
    cfg: &ExperimentConfig,
    name: String,
    fit: &FitFn<'_>,
) -> Result<EvalReport> {
    cfg.validate()?;
    if id.columns() != ood_train.columns() || ood_test.is_some_and(|t| t.columns() != id.columns()) {
        return Err(Error::invalid(format!(
            "feature tables disagree on columns: {:?} vs {:?}",
            id.columns(),
            ood_train.columns()
        )));
    }
    let columns = feature_columns(id.columns(), cfg.feature_set)?;
    let (id, ood_train) = (id.select(&columns)?, ood_train.select(&columns)?);
    let ood_test = ood_test.map(|t| t.select(&columns)).transpose()?;
    if ood_test.as_ref().is_some_and(|t| t.is_empty()) {
        return Err(Error::InsufficientData("OOD test pool is empty".into()));
    }
    draw_split(id.len(), ood_train.len(), cfg.n_per_class, cfg.seed)?;
    if ood_test.is_none() && ood_train.len() == cfg.n_per_class {
        return Err(Error::InsufficientData(format!(
            "OOD pool of {} rows leaves nothing to test after drawing {}",
            ood_train.len(),
            cfg.n_per_class
        )));
    }

    let outcomes: Vec<RepOutcome> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|r| -> Result<RepOutcome> {
            let seed = rng::derive_seed(cfg.seed, r as u64);
            let split = draw_split(id.len(), ood_train.len(), cfg.n_per_class, seed)?;
            let mut x = gather(&id, &split.id_train);
            x.extend(gather(&ood_train, &split.ood_train));
            let mut y = vec![0; split.id_train.len()];
            y.extend(vec![1; split.ood_train.len()]);
            let (scorer, importances) = fit(&x, &y, seed)?;

            let mut tx = gather(&id, &split.id_test);
            match &ood_test {
                Some(t) => tx.extend(t.rows().iter().cloned()),
                None => tx.extend(gather(&ood_train, &split.ood_train_rest)),
            }
            let mut ty = vec![0; split.id_test.len()];
            ty.resize(tx.len(), 1);
            let scores: Vec<f64> = tx.iter().map(|row| scorer.score(row)).collect();
            Ok(RepOutcome {
                auc: roc_auc(&scores, &ty)?,
                acc: accuracy_at_half(&scores, &ty)?,
                recall: recall_ood(&scores, &ty)?,
                importances,
            })
        })
        .collect::<Result<_>>()?;

    let pick = |f: fn(&RepOutcome) -> f64| outcomes.iter().map(f).collect::<Vec<f64>>();
    let (auc, acc, recall) = (pick(|o| o.auc), pick(|o| o.acc), pick(|o| o.recall));
    let imps: Vec<Vec<f64>> = outcomes.iter().filter_map(|o| o.importances.clone()).collect();
    let importances = if imps.is_empty() { None } else { Some(importance_report(&columns, &imps)?) };
    let (auc_mean, auc_std) = mean_std(&auc);
    let (acc_mean, acc_std) = mean_std(&acc);
    let (recall_mean, recall_std) = mean_std(&recall);
    Ok(EvalReport {
        detector: name,
        feature_set: cfg.feature_set,
        metric: cfg.metric,
        n_per_class: cfg.n_per_class,
        repetitions: cfg.repetitions,
        seed: cfg.seed,
        columns,
        auc_mean,
        auc_std,
        acc_mean,
        acc_std,
        recall_mean,
        recall_std,
        auc,
        acc,
        recall,
        importances,
    })
}

/// Runs `cfg.repetitions` draws. Each trains on `n_per_class` rows from the
/// in-distribution pool (label 0) and from `ood_train` (label 1), then
/// scores the untouched in-distribution rows against `ood_test`. Without an
/// `ood_test` pool the undrawn `ood_train` rows are scored instead.
pub fn run_experiment(
    id: &FeatureTable,
    ood_train: &FeatureTable,
    ood_test: Option<&FeatureTable>,
    cfg: &ExperimentConfig,
) -> Result<EvalReport> {
    let fit = |x: &[Vec<f64>], y: &[usize], seed: u64| -> Result<Fitted> {
        let det = fit_detector(cfg.detector, x, y, &cfg.detector_config, seed)?;
        let imp = det.forest().map(gini_importances);
        Ok((Box::new(det) as Box<dyn Scorer>, imp))
    };
    run_protocol(id, ood_train, ood_test, cfg, cfg.detector.to_string(), &fit)
}

/// Same protocol with a caller-supplied detector; `cfg.detector` is ignored.
pub fn run_experiment_with<F>(
    id: &FeatureTable,
    ood_train: &FeatureTable,
    ood_test: Option<&FeatureTable>,
    cfg: &ExperimentConfig,
    name: &str,
    fit: F,
) -> Result<EvalReport>
where
    F: Fn(&[Vec<f64>], &[usize], u64) -> Result<Box<dyn Scorer>> + Sync,
{
    let wrapped = |x: &[Vec<f64>], y: &[usize], seed: u64| fit(x, y, seed).map(|s| (s, None));
    run_protocol(id, ood_train, ood_test, cfg, name.to_string(), &wrapped)
}

/// Fits one detector on all rows (in-distribution label 0, OOD label 1).
pub fn fit_on_tables(id: &FeatureTable, ood: &FeatureTable, cfg: &ExperimentConfig) -> Result<SavedDetector> {
    let columns = feature_columns(id.columns(), cfg.feature_set)?;
    let mut x = id.select(&columns)?.rows().to_vec();
    x.extend(ood.select(&columns)?.rows().iter().cloned());
    let mut y = vec![0; id.len()];
    y.resize(x.len(), 1);
    fit_detector(cfg.detector, &x, &y, &cfg.detector_config, cfg.seed)
}

/// Plain-text table with one row per report: features, detector, n, then
/// mean (std) of AUC, accuracy and OOD recall.
pub fn render_table(reports: &[EvalReport]) -> String {
    let header = ["features", "detector", "n", "AUC", "accuracy", "recall"];
    let cell = |m: f64, s: f64| format!("{m:.3} ({s:.3})");
    let rows: Vec<[String; 6]> = reports
        .iter()
        .map(|r| {
            [
                r.feature_set.to_string(),
                r.detector.clone(),
                r.n_per_class.to_string(),
                cell(r.auc_mean, r.auc_std),
                cell(r.acc_mean, r.acc_std),
                cell(r.recall_mean, r.recall_std),
            ]
        })
        .collect();
    let widths: Vec<usize> =
        (0..6).map(|k| rows.iter().map(|r| r[k].len()).chain([header[k].len()]).max().unwrap_or(0)).collect();
    let line = |cells: Vec<&str>| {
        cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    let rules: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&line(rules.iter().map(String::as_str).collect()));
    out.push('\n');
    for r in &rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_hand_values() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.4; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.85, 0.7], &[1, 1, 0, 0]).unwrap(), 0.75);
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn accuracy_and_recall_hand_values() {
        assert_eq!(accuracy_at_half(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(accuracy_at_half(&[0.5], &[1]).unwrap(), 1.0);
        assert_eq!(accuracy_at_half(&[0.9, 0.1, 0.7, 0.2], &[1, 0, 0, 0]).unwrap(), 0.75);
        assert_eq!(recall_ood(&[0.9, 0.8], &[1, 1]).unwrap(), 1.0);
        assert_eq!(recall_ood(&[0.1, 0.2], &[1, 1]).unwrap(), 0.0);
        assert_eq!(recall_ood(&[0.9, 0.6, 0.1, 0.2, 0.3], &[1; 5]).unwrap(), 0.4);
        assert!(recall_ood(&[0.9], &[0]).is_err());
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let s = draw_split(50, 30, 10, 4).unwrap();
        assert_eq!(s, draw_split(50, 30, 10, 4).unwrap());
        assert_eq!(s.id_train.len(), 10);
        assert_eq!(s.id_test.len(), 40);
        assert!(s.id_train.iter().all(|i| !s.id_test.contains(i)));
        assert!(s.ood_train.iter().all(|i| !s.ood_train_rest.contains(i)));
        assert!(matches!(draw_split(10, 30, 10, 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn importance_report_of_one_forest_has_zero_std() {
        let cols: Vec<String> = vec!["a".into(), "b".into()];
        let r = importance_report(&cols, &[vec![0.25, 0.75]]).unwrap();
        assert_eq!(r.std, vec![0.0, 0.0]);
        let z = importance_report(&cols, &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(z.mean, vec![0.0, 0.0]);
    }

    #[test]
    fn feature_columns_follow_set() {
        let cols: Vec<String> = ["max_softmax", "mutual_info", "pred_entropy", "spread_1", "spread_2", "norm_1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(feature_columns(&cols, FeatureSet::Last).unwrap().len(), 3);
        assert_eq!(
            feature_columns(&cols, FeatureSet::LastPlusSpread).unwrap()[3..],
            ["spread_1".to_string(), "spread_2".to_string()]
        );
        assert!(feature_columns(&cols[..3], FeatureSet::LastPlusSpread).is_err());
    }
}

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::rank::{midranks, spearman};
use crate::synth::ClassifierResponseSet;

/// Probability clipping used by [`classifier_metrics`] for the log-loss.
pub const DEFAULT_LOG_LOSS_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierMetrics {
    pub classifier: String,
    /// Mean probability given to the labelled class.
    pub avg_response: f64,
    pub ability: f64,
    pub accuracy: f64,
    /// Binary only.
    pub f1: Option<f64>,
    /// Binary only.
    pub brier: Option<f64>,
    pub log_loss: f64,
    /// `None` for multi-class data or when one class is absent.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub rows: Vec<ClassifierMetrics>,
}

/// Column names accepted by [`MetricsReport::column`].
pub const METRIC_COLUMNS: [&str; 7] =
    ["avg_response", "ability", "accuracy", "f1", "brier", "log_loss", "auc"];

impl MetricsReport {
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let pick = |r: &ClassifierMetrics| match name {
            "avg_response" => Some(Some(r.avg_response)),
            "ability" => Some(Some(r.ability)),
            "accuracy" => Some(Some(r.accuracy)),
            "f1" => Some(r.f1),
            "brier" => Some(r.brier),
            "log_loss" => Some(Some(r.log_loss)),
            "auc" => Some(r.auc),
            _ => None,
        };
        self.rows.iter().map(pick).collect()
    }

    /// Pairwise Spearman correlations between the metric columns.
    ///
    /// Classifiers with an undefined value in either column are left out of
    /// that pair; a pair with fewer than two classifiers or a constant
    /// column is `None`.
    pub fn rank_correlations(&self) -> Vec<Vec<Option<f64>>> {
        let cols: Vec<Vec<Option<f64>>> = METRIC_COLUMNS
            .iter()
            .map(|c| self.column(c).expect("known column"))
            .collect();
        cols.iter()
            .map(|x| {
                cols.iter()
                    .map(|y| {
                        let (a, b): (Vec<f64>, Vec<f64>) = x
                            .iter()
                            .zip(y)
                            .filter_map(|(p, q)| Some(((*p)?, (*q)?)))
                            .unzip();
                        spearman(&a, &b).ok()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Area under the ROC curve of `scores` against binary `positive` flags,
/// via the Mann-Whitney rank statistic with midranks for tied scores.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::LengthMismatch { left: scores.len(), right: positive.len() });
    }
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateAuc);
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, p)| **p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Argmax prediction; ties go to the highest class index (the positive
/// class in the binary case).
fn predict_class(p: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in p.iter().enumerate() {
        if v >= p[best] {
            best = c;
        }
    }
    best
}

/// Table of per-classifier metrics next to the supplied abilities.
///
/// For binary data class 1 is the positive class. For more classes only
/// accuracy, log-loss and the average response are defined.
pub fn classifier_metrics(c: &ClassifierResponseSet, abilities: &[f64]) -> Result<MetricsReport> {
    if abilities.len() != c.num_classifiers() {
        return Err(Error::LengthMismatch { left: abilities.len(), right: c.num_classifiers() });
    }
    let n = c.num_instances() as f64;
    let binary = c.num_classes() == 2;
    let labels = c.labels();
    let positive: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
    let mut rows = Vec::with_capacity(c.num_classifiers());
    for (i, name) in c.classifier_ids().iter().enumerate() {
        let mut avg = 0.0;
        let mut correct = 0usize;
        let mut ll = 0.0;
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        let mut brier = 0.0;
        let mut scores = Vec::with_capacity(labels.len());
        for (j, &y) in labels.iter().enumerate() {
            let p = c.probs(i, j);
            let pc = p[y];
            avg += pc;
            ll -= pc.clamp(DEFAULT_LOG_LOSS_EPS, 1.0 - DEFAULT_LOG_LOSS_EPS).ln();
            let pred = predict_class(p);
            if pred == y {
                correct += 1;
            }
            if binary {
                match (pred == 1, y == 1) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    (false, false) => {}
                }
                let t = if y == 1 { 1.0 } else { 0.0 };
                brier += (p[1] - t) * (p[1] - t);
                scores.push(p[1]);
            }
        }
        let (f1, brier, auc_value) = if binary {
            let denom = 2 * tp + fp + fneg;
            let f1 = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
            (Some(f1), Some(brier / n), auc(&scores, &positive).ok())
        } else {
            (None, None, None)
        };
        rows.push(ClassifierMetrics {
            classifier: name.clone(),
            avg_response: avg / n,
            ability: abilities[i],
            accuracy: correct as f64 / n,
            f1,
            brier,
            log_loss: ll / n,
            auc: auc_value,
        });
    }
    Ok(MetricsReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> ClassifierResponseSet {
        let m = rows.len();
        let n = labels.len();
        let probs = rows.into_iter().flat_map(|r| r.into_iter().flat_map(|p1| [1.0 - p1, p1])).collect();
        ClassifierResponseSet::new(
            (0..m).map(|i| format!("c{i}")).collect(),
            (0..n).map(|j| format!("x{j}")).collect(),
            2,
            labels,
            probs,
        )
        .unwrap()
    }

    #[test]
    fn perfect_classifier() {
        let labels = vec![0, 1, 1, 0];
        let c = set(vec![vec![0.0, 1.0, 1.0, 0.0]], labels);
        let r = &classifier_metrics(&c, &[0.9]).unwrap().rows[0];
        assert_eq!((r.accuracy, r.f1, r.brier, r.auc), (1.0, Some(1.0), Some(0.0), Some(1.0)));
    }

    #[test]
    fn constant_and_always_positive() {
        let labels = vec![0, 1, 0, 1, 1, 0];
        let c = set(vec![vec![0.5; 6], vec![1.0; 6]], labels);
        let rep = classifier_metrics(&c, &[0.5, 0.5]).unwrap();
        let k = &rep.rows[0];
        assert_eq!(k.accuracy, 0.5);
        assert!((k.brier.unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(k.auc, Some(0.5));
        assert_eq!(k.avg_response, 0.5);
        assert!((rep.rows[1].f1.unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn auc_needs_both_classes() {
        assert_eq!(auc(&[0.1, 0.2], &[true, true]), Err(Error::DegenerateAuc));
        let c = set(vec![vec![0.3, 0.6]], vec![1, 1]);
        assert_eq!(classifier_metrics(&c, &[0.5]).unwrap().rows[0].auc, None);
    }

    #[test]
    fn rank_correlation_diagonal_is_one() {
        let labels = vec![0, 1, 0, 1];
        let c = set(
            vec![vec![0.2, 0.9, 0.1, 0.7], vec![0.6, 0.5, 0.4, 0.3], vec![0.4, 0.8, 0.5, 0.55]],
            labels,
        );
        let rep = classifier_metrics(&c, &[0.8, 0.3, 0.6]).unwrap();
        let table = rep.rank_correlations();
        assert_eq!(table[1][1], Some(1.0));
        assert_eq!(table[0][0], Some(1.0));
    }
}

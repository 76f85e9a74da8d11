//! Classification metrics: pairwise-concordance AUC and threshold metrics at
//! an operating point of 0.5 on the positive-class probability.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub specificity: Option<f64>,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class_auc: Option<Vec<f64>>,
    pub n_samples: usize,
}

/// Confusion counts at a threshold: scores `>= threshold` predict positive.
pub fn confusion_at(scores: &[f64], labels: &[bool], threshold: f64) -> (usize, usize, usize, usize) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (s, l) in scores.iter().zip(labels) {
        match (*s >= threshold, *l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    (tp, fp, tn, fn_)
}

/// AUC by pairwise concordance: over every (positive, negative) score pair,
/// count 1 for a correctly ordered pair and 1/2 for a tie.
pub fn auc_concordance(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l)
        .map(|(s, _)| *s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| !**l)
        .map(|(s, _)| *s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::UndefinedMetric {
            reason: "AUC needs both classes present".into(),
        });
    }
    let mut concordant = 0.0_f64;
    for p in &pos {
        for n in &neg {
            if p > n {
                concordant += 1.0;
            } else if p == n {
                concordant += 0.5;
            }
        }
    }
    Ok(concordant / (pos.len() as f64 * neg.len() as f64))
}

/// Binary metrics from positive-class scores and boolean labels.
///
/// Precision defaults to 0 when nothing is predicted positive.
pub fn binary_metrics(scores: &[f64], labels: &[bool]) -> Result<MetricReport> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::UndefinedMetric {
            reason: format!(
                "scores ({}) and labels ({}) must be equal-length and non-empty",
                scores.len(),
                labels.len()
            ),
        });
    }
    let auc = auc_concordance(scores, labels)?;
    let (tp, fp, tn, fn_) = confusion_at(scores, labels, THRESHOLD);
    let sensitivity = tp as f64 / (tp + fn_) as f64;
    let specificity = tn as f64 / (tn + fp) as f64;
    let accuracy = (tp + tn) as f64 / scores.len() as f64;
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    Ok(MetricReport {
        auc,
        sensitivity: Some(sensitivity),
        specificity: Some(specificity),
        accuracy,
        precision: Some(precision),
        per_class_auc: None,
        n_samples: scores.len(),
    })
}

/// Fraction of exact prediction matches.
pub fn multiclass_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::UndefinedMetric {
            reason: "predictions and labels must be equal-length and non-empty".into(),
        });
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// One-vs-rest AUC per class from an `[n, C]` score matrix (rows are
/// per-sample class scores).
pub fn one_vs_rest_auc(scores: &[Vec<f64>], labels: &[usize]) -> Result<Vec<f64>> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::UndefinedMetric {
            reason: "scores and labels must be equal-length and non-empty".into(),
        });
    }
    let classes = scores[0].len();
    if classes < 2 {
        return Err(Error::UndefinedMetric {
            reason: "one-vs-rest needs at least 2 classes".into(),
        });
    }
    let mut out = Vec::with_capacity(classes);
    for c in 0..classes {
        let class_scores: Vec<f64> = scores.iter().map(|row| row[c]).collect();
        let class_labels: Vec<bool> = labels.iter().map(|l| *l == c).collect();
        out.push(auc_concordance(&class_scores, &class_labels)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hand_case_auc_075() {
        // 3 of 4 positive/negative pairs concordant.
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [false, false, true, true];
        let r = binary_metrics(&scores, &labels).unwrap();
        assert_eq!(r.auc, 0.75);
        assert_eq!(r.n_samples, 4);
    }

    #[test]
    fn perfect_and_inverted_ranking() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        let labels = [false, false, true, true];
        let r = binary_metrics(&scores, &labels).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.sensitivity, Some(1.0));
        assert_eq!(r.specificity, Some(1.0));
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.precision, Some(1.0));

        let inverted: Vec<bool> = labels.iter().map(|l| !l).collect();
        assert_eq!(binary_metrics(&scores, &inverted).unwrap().auc, 0.0);
    }

    #[test]
    fn ties_count_half() {
        let scores = [0.5, 0.5];
        let labels = [true, false];
        assert_eq!(auc_concordance(&scores, &labels).unwrap(), 0.5);
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let scores = [0.05, 0.3, 0.31, 0.7, 0.66, 0.9];
        let labels = [false, false, true, true, false, true];
        let base = auc_concordance(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-8.0 * s).exp())).collect();
        assert_abs_diff_eq!(
            auc_concordance(&squashed, &labels).unwrap(),
            base,
            epsilon = 1e-12
        );
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            binary_metrics(&[0.2, 0.8], &[true, true]),
            Err(Error::UndefinedMetric { .. })
        ));
    }

    #[test]
    fn multiclass_cases() {
        assert_eq!(multiclass_accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(multiclass_accuracy(&[0, 1, 2], &[0, 1, 1]).unwrap(), 2.0 / 3.0);

        // One perfectly ranked class leaves the others untouched.
        let scores = vec![
            vec![0.9, 0.1, 0.2],
            vec![0.8, 0.3, 0.1],
            vec![0.1, 0.5, 0.4],
            vec![0.2, 0.6, 0.3],
        ];
        let labels = vec![0, 0, 1, 2];
        let aucs = one_vs_rest_auc(&scores, &labels).unwrap();
        assert_eq!(aucs[0], 1.0);
        assert_eq!(aucs.len(), 3);
    }
}

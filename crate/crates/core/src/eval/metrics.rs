//! Classification metrics, correlation and cluster quality.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EvalError, Metric};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: Metric,
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
}

fn ratio(num: usize, den: usize) -> Metric {
    if den == 0 {
        Metric::UNDEFINED
    } else {
        Metric::of(num as f64 / den as f64)
    }
}

impl MetricsSummary {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision.get(), recall.get()) {
            (Some(p), Some(r)) if p + r > 0.0 => Metric::of(f1_score(p, r)),
            // Both zero: the count form 2tp/(2tp+fp+fn) is 0 with a nonzero denominator.
            (Some(_), Some(_)) => Metric::of(0.0),
            _ => Metric::UNDEFINED,
        };
        Self {
            tp,
            fp,
            tn,
            fn_,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision,
            recall,
            f1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn classification_metrics(predictions: &[u8], labels: &[u8]) -> Result<MetricsSummary, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty("predictions"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        if p > 1 || l > 1 {
            return Err(EvalError::NonBinary(p.max(l)));
        }
        match (p, l) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            _ => fn_ += 1,
        }
    }
    Ok(MetricsSummary::from_counts(tp, fp, tn, fn_))
}

/// Harmonic mean of precision and recall.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    2.0 * precision * recall / (precision + recall)
}

/// Range of F1 reachable when precision and recall are only known to within
/// `half_width` (F1 is increasing in both arguments).
pub fn f1_interval(precision: f64, recall: f64, half_width: f64) -> (f64, f64) {
    (
        f1_score(precision - half_width, recall - half_width),
        f1_score(precision + half_width, recall + half_width),
    )
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(EvalError::Undefined("pearson needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::Undefined("pearson of a zero-variance series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean silhouette with Euclidean distances. A point alone in its cluster
/// scores 0, as does a point with `a = b = 0`.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64, EvalError> {
    if points.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            left: points.len(),
            right: labels.len(),
        });
    }
    let clusters: BTreeSet<usize> = labels.iter().copied().collect();
    if clusters.len() < 2 {
        return Err(EvalError::Undefined("silhouette needs at least two clusters".into()));
    }
    if let Some(p) = points.iter().find(|p| p.len() != points[0].len()) {
        return Err(EvalError::LengthMismatch {
            left: points[0].len(),
            right: p.len(),
        });
    }
    let scores: Vec<f64> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut sum = vec![0.0; clusters.len()];
            let mut count = vec![0usize; clusters.len()];
            for j in 0..points.len() {
                if i == j {
                    continue;
                }
                let c = clusters.range(..labels[j]).count();
                sum[c] += euclidean(&points[i], &points[j]);
                count[c] += 1;
            }
            let own = clusters.range(..labels[i]).count();
            if count[own] == 0 {
                return 0.0;
            }
            let a = sum[own] / count[own] as f64;
            let b = (0..clusters.len())
                .filter(|&c| c != own && count[c] > 0)
                .map(|c| sum[c] / count[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_confusion_matrix() {
        let m = classification_metrics(&[1, 0, 0, 1, 1], &[1, 0, 1, 1, 0]).unwrap();
        assert_eq!((m.tp, m.fp, m.tn, m.fn_), (2, 1, 1, 1));
        assert!((m.accuracy.get().unwrap() - 0.6).abs() < 1e-12);
        for v in [m.precision, m.recall, m.f1] {
            assert!((v.get().unwrap() - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn undefined_is_explicit() {
        let m = classification_metrics(&[0, 0], &[0, 0]).unwrap();
        assert_eq!(m.precision, Metric::UNDEFINED);
        assert_eq!(m.recall, Metric::UNDEFINED);
        assert_eq!(m.f1, Metric::UNDEFINED);
        assert_eq!(m.accuracy.get(), Some(1.0));
        let json = serde_json::to_value(m).unwrap();
        assert_eq!(json["precision"], "undefined");
        assert_eq!(json["fn"], 0);
        assert!(classification_metrics(&[1], &[1, 0]).is_err());
        assert!(classification_metrics(&[], &[]).is_err());
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn silhouette_examples() {
        let pts = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]];
        let b = (10.0 + 101f64.sqrt()) / 2.0;
        let s = silhouette(&pts, &[0, 0, 1, 1]).unwrap();
        assert!((s - (1.0 - 1.0 / b)).abs() < 1e-12);
        let same = vec![vec![1.0, 1.0]; 4];
        assert_eq!(silhouette(&same, &[0, 0, 1, 1]).unwrap(), 0.0);
        let apart = vec![vec![0.0], vec![0.0], vec![5.0], vec![5.0]];
        assert_eq!(silhouette(&apart, &[0, 0, 1, 1]).unwrap(), 1.0);
        assert!(silhouette(&apart, &[0, 0, 0, 0]).is_err());
    }
}

//! Whether the evidence text of an analysis separates by its outcome.
//!
//! Evidence (phases 1-4) is embedded, the silhouette is taken over outcome
//! labels, and a ridge regression on 0/1 targets (closed form, intercept
//! unpenalized, threshold 0.5) is scored with k-fold cross-validation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::silhouette;
use super::EvalError;
use crate::analysis::AnalysisReport;
use crate::gateway::Gateway;

pub const RIDGE_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub silhouette: f64,
    pub kfold_accuracy: f64,
    pub k: usize,
    pub embedding_dim: usize,
    pub n: usize,
}

/// Ridge fit on centered data; returns (weights, intercept).
pub fn ridge_fit(x: &[Vec<f64>], y: &[f64], lambda: f64) -> (DVector<f64>, f64) {
    let n = x.len();
    let d = x[0].len();
    let mean_x: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, d, |i, j| x[i][j] - mean_x[j]);
    let yc = DVector::from_fn(n, |i, _| y[i] - mean_y);
    // Primal or dual normal equations, whichever system is smaller.
    let w = if d <= n {
        let a = xc.transpose() * &xc + DMatrix::identity(d, d) * lambda;
        let b = xc.transpose() * &yc;
        a.cholesky().expect("regularized system is positive definite").solve(&b)
    } else {
        let a = &xc * xc.transpose() + DMatrix::identity(n, n) * lambda;
        let alpha = a.cholesky().expect("regularized system is positive definite").solve(&yc);
        xc.transpose() * alpha
    };
    let intercept = mean_y - mean_x.iter().zip(w.iter()).map(|(m, w)| m * w).sum::<f64>();
    (w, intercept)
}

fn predict(w: &DVector<f64>, intercept: f64, x: &[f64]) -> u8 {
    let s: f64 = intercept + x.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>();
    u8::from(s > 0.5)
}

/// Fold index per item: items are grouped by label and dealt round-robin,
/// so every fold is non-empty and class proportions are kept.
pub fn stratified_folds(labels: &[u8], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by_key(|&i| labels[i]);
    let mut fold = vec![0; labels.len()];
    for (t, i) in order.into_iter().enumerate() {
        fold[i] = t % k;
    }
    fold
}

/// Mean held-out accuracy of the ridge classifier over `k` folds.
pub fn kfold_accuracy(x: &[Vec<f64>], labels: &[u8], k: usize) -> Result<f64, EvalError> {
    if k < 2 {
        return Err(EvalError::InvalidK { k, n: x.len() });
    }
    if x.len() < k {
        return Err(EvalError::InvalidK { k, n: x.len() });
    }
    let folds = stratified_folds(labels, k);
    let accs: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|f| {
            let (mut tx, mut ty) = (Vec::new(), Vec::new());
            for i in 0..x.len() {
                if folds[i] != f {
                    tx.push(x[i].clone());
                    ty.push(labels[i] as f64);
                }
            }
            let (w, b) = ridge_fit(&tx, &ty, RIDGE_LAMBDA);
            let test: Vec<usize> = (0..x.len()).filter(|&i| folds[i] == f).collect();
            let hits = test.iter().filter(|&&i| predict(&w, b, &x[i]) == labels[i]).count();
            hits as f64 / test.len() as f64
        })
        .collect();
    Ok(accs.iter().sum::<f64>() / k as f64)
}

pub fn consistency_from_embeddings(
    embeddings: &[Vec<f64>],
    labels: &[u8],
    k: usize,
) -> Result<ConsistencyResult, EvalError> {
    if embeddings.len() < k || k < 2 {
        return Err(EvalError::InvalidK { k, n: embeddings.len() });
    }
    let cluster: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    Ok(ConsistencyResult {
        silhouette: silhouette(embeddings, &cluster)?,
        kfold_accuracy: kfold_accuracy(embeddings, labels, k)?,
        k,
        embedding_dim: embeddings[0].len(),
        n: embeddings.len(),
    })
}

pub fn consistency_eval(reports: &[AnalysisReport], gateway: &Gateway, k: usize) -> Result<ConsistencyResult, EvalError> {
    if reports.len() < k || k < 2 {
        return Err(EvalError::InvalidK { k, n: reports.len() });
    }
    let embeddings = reports
        .par_iter()
        .map(|r| gateway.embed(&r.evidence_text()))
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<u8> = reports.iter().map(|r| r.outcome.as_u8()).collect();
    consistency_from_embeddings(&embeddings, &labels, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_one_hot() {
        let labels: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let x: Vec<Vec<f64>> = labels.iter().map(|&l| if l == 1 { vec![0.0, 1.0] } else { vec![1.0, 0.0] }).collect();
        let r = consistency_from_embeddings(&x, &labels, 5).unwrap();
        assert_eq!(r.kfold_accuracy, 1.0);
        assert_eq!(r.silhouette, 1.0);
    }

    #[test]
    fn identical_vectors_give_majority_rate() {
        let labels: Vec<u8> = (0..50).map(|i| u8::from(i < 20)).collect();
        let x = vec![vec![0.3, -1.2, 7.0]; 50];
        let acc = kfold_accuracy(&x, &labels, 5).unwrap();
        assert!((acc - 0.6).abs() < 1e-12);
    }

    #[test]
    fn dual_form_matches_primal() {
        let x: Vec<Vec<f64>> = vec![vec![1.0, 0.0, 2.0, 3.0], vec![0.5, 1.0, 0.0, 1.0], vec![2.0, 2.0, 1.0, 0.0]];
        let y = [0.0, 1.0, 1.0];
        let (w, _) = ridge_fit(&x, &y, 0.5);
        let mx: Vec<f64> = (0..4).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / 3.0).collect();
        let xc = DMatrix::from_fn(3, 4, |i, j| x[i][j] - mx[j]);
        let yc = DVector::from_vec(vec![-2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        let primal = (xc.transpose() * &xc + DMatrix::identity(4, 4) * 0.5)
            .lu()
            .solve(&(xc.transpose() * yc))
            .unwrap();
        assert!((w - primal).norm() < 1e-12);
    }

    #[test]
    fn k_bounds() {
        let x = vec![vec![0.0]; 3];
        assert!(kfold_accuracy(&x, &[0, 1, 0], 4).is_err());
        assert!(kfold_accuracy(&x, &[0, 1, 0], 1).is_err());
    }
}

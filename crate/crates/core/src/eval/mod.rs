//! Evaluation kernels and their output files.

pub mod consistency;
pub mod metrics;
pub mod recall;
pub mod robustness;
pub mod sentiment;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::gateway::GatewayError;

pub use consistency::{consistency_eval, consistency_from_embeddings, kfold_accuracy, ConsistencyResult};
pub use metrics::{classification_metrics, f1_interval, f1_score, pearson, silhouette, MetricsSummary};
pub use recall::{behavior_recall, write_recall_csv, MatcherTable, RecallReport};
pub use robustness::{counterfactual_robustness, LabeledCase, RobustnessReport};
pub use sentiment::{
    sentiment_score, tone_adaptation_eval, tone_points, write_tone_curve_csv, Lexicon, SentimentScorer,
    ToneCurvePoint, ToneReport,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("value {0} is not binary")]
    NonBinary(u8),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("k = {k} folds is invalid for {n} items")]
    InvalidK { k: usize, n: usize },
    #[error("unpaired counterfactual: {0}")]
    Unpaired(String),
    #[error("malformed sentiment score: {0}")]
    MalformedScore(String),
    #[error("invalid lexicon entry at {0}")]
    Lexicon(String),
    #[error("id {0:?} has a prediction but no label")]
    MissingLabel(String),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A fraction that is either a number or explicitly undefined (vanishing
/// denominator). Serialized as the number or the string `"undefined"`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metric(Option<f64>);

impl Metric {
    pub const UNDEFINED: Metric = Metric(None);

    pub fn of(v: f64) -> Self {
        Metric(Some(v))
    }

    pub fn get(self) -> Option<f64> {
        self.0
    }

    pub fn is_defined(self) -> bool {
        self.0.is_some()
    }
}

impl From<Option<f64>> for Metric {
    fn from(v: Option<f64>) -> Self {
        Metric(v)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v}"),
            None => f.write_str("undefined"),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Metric(Some(v))),
            Raw::Str(s) if s == "undefined" => Ok(Metric(None)),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("expected a number or \"undefined\", got {s:?}"))),
        }
    }
}

/// One line of a predictions or labels file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdOutcome {
    pub id: String,
    #[serde(alias = "prediction", alias = "label")]
    pub outcome: u8,
}

/// Joins predictions to labels by id, in prediction order.
pub fn join_predictions(preds: &[IdOutcome], labels: &[IdOutcome]) -> Result<(Vec<u8>, Vec<u8>), EvalError> {
    let by_id: BTreeMap<&str, u8> = labels.iter().map(|l| (l.id.as_str(), l.outcome)).collect();
    let mut p = Vec::with_capacity(preds.len());
    let mut l = Vec::with_capacity(preds.len());
    for x in preds {
        let y = by_id.get(x.id.as_str()).ok_or_else(|| EvalError::MissingLabel(x.id.clone()))?;
        p.push(x.outcome);
        l.push(*y);
    }
    Ok((p, l))
}

pub fn read_outcomes(path: &Path) -> Result<Vec<IdOutcome>, EvalError> {
    Ok(crate::util::read_jsonl(path)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EvalError> {
    Ok(crate::util::write_json_pretty(path, value)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_round_trip() {
        let v = serde_json::to_string(&[Metric::of(0.5), Metric::UNDEFINED]).unwrap();
        assert_eq!(v, r#"[0.5,"undefined"]"#);
        let back: Vec<Metric> = serde_json::from_str(&v).unwrap();
        assert_eq!(back, vec![Metric::of(0.5), Metric::UNDEFINED]);
        assert!(serde_json::from_str::<Metric>("\"nan\"").is_err());
    }

    #[test]
    fn join_by_id() {
        let p: Vec<IdOutcome> = serde_json::from_str(r#"[{"id":"b","prediction":1},{"id":"a","prediction":0}]"#).unwrap();
        let l: Vec<IdOutcome> = serde_json::from_str(r#"[{"id":"a","label":1},{"id":"b","label":1}]"#).unwrap();
        assert_eq!(join_predictions(&p, &l).unwrap(), (vec![1, 0], vec![1, 1]));
        assert!(join_predictions(&p, &l[..1]).is_err());
    }
}

//! Sentiment of assistant replies on a 0-5 scale and the mood/tone curve.

use std::collections::HashMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::metrics::pearson;
use super::{EvalError, Metric};
use crate::analysis::{DialogueSession, Speaker};
use crate::gateway::{ChatMessage, Gateway, GenParams};
use crate::templates::TemplateId;

pub const SCALE_MAX: f64 = 5.0;
pub const NEUTRAL: f64 = 2.5;

static WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[a-z]+(?:'[a-z]+)?").expect("valid regex"));
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+(?:\.\d+)?").expect("valid regex"));

/// Word valences on the 0-5 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    valence: HashMap<String, f64>,
}

impl Lexicon {
    pub fn shipped() -> Self {
        Self::from_tsv(include_str!("../../data/valence.tsv")).expect("shipped lexicon is valid")
    }

    /// Two tab-separated columns, `word` and `valence`, with a header row.
    pub fn from_tsv(text: &str) -> Result<Self, EvalError> {
        let mut valence = HashMap::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || EvalError::Lexicon(format!("line {}: {line:?}", n + 1));
            let (w, v) = line.split_once('\t').ok_or_else(bad)?;
            let v: f64 = v.trim().parse().map_err(|_| bad())?;
            if !(0.0..=SCALE_MAX).contains(&v) {
                return Err(bad());
            }
            valence.insert(w.trim().to_lowercase(), v);
        }
        Ok(Self { valence })
    }

    pub fn from_path(path: &Path) -> Result<Self, EvalError> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.valence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valence.is_empty()
    }

    /// Mean valence of the words found in the lexicon; neutral when none are.
    pub fn score(&self, text: &str) -> Result<f64, EvalError> {
        if text.trim().is_empty() {
            return Err(EvalError::Empty("text"));
        }
        let lower = text.to_lowercase();
        let hits: Vec<f64> = WORD
            .find_iter(&lower)
            .filter_map(|m| self.valence.get(m.as_str()).copied())
            .collect();
        if hits.is_empty() {
            return Ok(NEUTRAL);
        }
        Ok(hits.iter().sum::<f64>() / hits.len() as f64)
    }
}

/// Maps class probabilities to the 0-5 scale: all-negative is 0, all-positive is 5.
pub fn probabilities_to_scale(negative: f64, neutral: f64, positive: f64) -> Result<f64, EvalError> {
    let total = negative + neutral + positive;
    if [negative, neutral, positive].iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-6 {
        return Err(EvalError::MalformedScore(format!(
            "probabilities {negative}, {neutral}, {positive} do not form a distribution"
        )));
    }
    Ok(SCALE_MAX * (positive + 0.5 * neutral))
}

#[derive(Deserialize)]
struct ClassProbabilities {
    negative: f64,
    neutral: f64,
    positive: f64,
}

/// Reads a backend reply: a bare 0-5 number, or a JSON object of class probabilities.
pub fn parse_backend_score(reply: &str) -> Result<f64, EvalError> {
    if let Ok(p) = serde_json::from_str::<ClassProbabilities>(reply.trim()) {
        return probabilities_to_scale(p.negative, p.neutral, p.positive);
    }
    let m = NUMBER
        .find(reply)
        .ok_or_else(|| EvalError::MalformedScore(reply.to_string()))?;
    let v: f64 = m.as_str().parse().map_err(|_| EvalError::MalformedScore(reply.to_string()))?;
    if !(0.0..=SCALE_MAX).contains(&v) {
        return Err(EvalError::MalformedScore(format!("{v} is outside 0-5")));
    }
    Ok(v)
}

#[derive(Clone, Copy)]
pub enum SentimentScorer<'a> {
    Lexicon(&'a Lexicon),
    Backend(&'a Gateway),
}

pub fn sentiment_score(text: &str, scorer: SentimentScorer<'_>) -> Result<f64, EvalError> {
    match scorer {
        SentimentScorer::Lexicon(l) => l.score(text),
        SentimentScorer::Backend(g) => {
            if text.trim().is_empty() {
                return Err(EvalError::Empty("text"));
            }
            let prompt = TemplateId::Sentiment
                .render(&[("text", text)])
                .expect("template variables match");
            let params = GenParams {
                max_tokens: 16,
                ..GenParams::default()
            };
            parse_backend_score(&g.chat(&[ChatMessage::user(prompt)], &params)?.text)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneCurvePoint {
    pub mood: f64,
    pub sentiment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneReport {
    /// Correlation of sentiment with mood below the neutral point.
    pub r_low: Metric,
    /// Correlation of sentiment with mood above the neutral point.
    pub r_high: Metric,
    pub curve: Vec<ToneCurvePoint>,
}

pub const NEUTRAL_MOOD: f64 = 3.0;

fn side_r(points: &[ToneCurvePoint]) -> Metric {
    let x: Vec<f64> = points.iter().map(|p| p.mood).collect();
    let y: Vec<f64> = points.iter().map(|p| p.sentiment).collect();
    pearson(&x, &y).ok().into()
}

/// Pearson correlation on each side of the neutral mood. A V-shaped response
/// gives a negative `r_low` and a positive `r_high`.
pub fn tone_adaptation_eval(points: &[ToneCurvePoint]) -> ToneReport {
    let mut curve = points.to_vec();
    // Fixed order so the floating-point sums do not depend on input order.
    curve.sort_by(|a, b| a.mood.total_cmp(&b.mood).then(a.sentiment.total_cmp(&b.sentiment)));
    let low: Vec<_> = curve.iter().copied().filter(|p| p.mood < NEUTRAL_MOOD).collect();
    let high: Vec<_> = curve.iter().copied().filter(|p| p.mood > NEUTRAL_MOOD).collect();
    ToneReport {
        r_low: side_r(&low),
        r_high: side_r(&high),
        curve,
    }
}

/// One point per session with a mood: mean sentiment of its assistant turns.
pub fn tone_points(sessions: &[DialogueSession], scorer: SentimentScorer<'_>) -> Result<Vec<ToneCurvePoint>, EvalError> {
    let mut out = Vec::new();
    for s in sessions {
        let Some(mood) = s.mood_context else { continue };
        let scores = s
            .turns
            .iter()
            .filter(|t| t.role == Speaker::Assistant)
            .map(|t| sentiment_score(&t.text, scorer))
            .collect::<Result<Vec<_>, _>>()?;
        if scores.is_empty() {
            continue;
        }
        out.push(ToneCurvePoint {
            mood,
            sentiment: scores.iter().sum::<f64>() / scores.len() as f64,
        });
    }
    Ok(out)
}

pub fn write_tone_curve_csv(path: &Path, curve: &[ToneCurvePoint]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, MockRule};

    fn lex() -> Lexicon {
        Lexicon::from_tsv("word\tvalence\ngreat\t5\nokay\t2.5\nsad\t1\n").unwrap()
    }

    #[test]
    fn lexicon_arithmetic() {
        assert_eq!(lex().score("Great, great!").unwrap(), 5.0);
        assert_eq!(lex().score("okay okay").unwrap(), 2.5);
        assert_eq!(lex().score("great day but sad night, okay").unwrap(), (5.0 + 1.0 + 2.5) / 3.0);
        assert_eq!(lex().score("nothing known").unwrap(), NEUTRAL);
        assert!(lex().score("  ").is_err());
        assert!(Lexicon::shipped().len() > 100);
    }

    #[test]
    fn backend_scores() {
        let g = Gateway::new(MockBackend::new(vec![MockRule::reply("*", "4")]).unwrap());
        assert_eq!(sentiment_score("hi", SentimentScorer::Backend(&g)).unwrap(), 4.0);
        let v = parse_backend_score(r#"{"negative":0.2,"neutral":0.4,"positive":0.4}"#).unwrap();
        assert!((v - 3.0).abs() < 1e-12);
        assert!(parse_backend_score("7").is_err());
        assert!(parse_backend_score("n/a").is_err());
    }

    fn pts(f: impl Fn(f64) -> f64) -> Vec<ToneCurvePoint> {
        [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0]
            .iter()
            .map(|&m| ToneCurvePoint { mood: m, sentiment: f(m) })
            .collect()
    }

    #[test]
    fn exact_v_and_flat() {
        let r = tone_adaptation_eval(&pts(|m| (m - 3.0).abs() + 2.0));
        assert!((r.r_low.get().unwrap() + 1.0).abs() < 1e-12);
        assert!((r.r_high.get().unwrap() - 1.0).abs() < 1e-12);
        let flat = tone_adaptation_eval(&pts(|_| 3.0));
        assert_eq!(flat.r_low, Metric::UNDEFINED);
        assert_eq!(flat.r_high, Metric::UNDEFINED);
    }

    #[test]
    fn too_few_points_undefined() {
        let r = tone_adaptation_eval(&[ToneCurvePoint { mood: 1.0, sentiment: 3.0 }, ToneCurvePoint { mood: 4.0, sentiment: 3.0 }]);
        assert_eq!(r.r_low, Metric::UNDEFINED);
    }
}

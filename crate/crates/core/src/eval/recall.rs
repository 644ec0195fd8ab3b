//! Whether a conversation quotes the week's measured indicators.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use super::{EvalError, Metric};
use crate::cohort::{BehaviorField, IndicatorName, WeeklyBundle};
use crate::templates::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
    pub phrases: Vec<String>,
}

impl Band {
    fn contains(&self, v: f64) -> bool {
        self.min.is_none_or(|m| v >= m) && self.max.is_none_or(|m| v <= m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorMatcher {
    pub aliases: Vec<String>,
    /// Unit suffix to multiplier into the stored unit.
    #[serde(default)]
    pub units: BTreeMap<String, f64>,
    #[serde(default)]
    pub bands: Vec<Band>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherTable {
    /// Relative tolerance for numeric mentions.
    pub tolerance: f64,
    pub scenarios: BTreeMap<String, Vec<String>>,
    pub indicators: BTreeMap<String, IndicatorMatcher>,
}

impl MatcherTable {
    pub fn shipped() -> Self {
        serde_json::from_str(include_str!("../../data/recall_matchers.json")).expect("shipped matcher table is valid")
    }

    pub fn from_path(path: &Path) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn expected(&self, scenario: Scenario) -> &[String] {
        self.scenarios.get(scenario.as_str()).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub scenario: Scenario,
    pub indicators_expected: Vec<String>,
    pub indicators_mentioned: Vec<String>,
    pub recall_fraction: Metric,
}

static SENTENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[^.!?\n]+(?:\.\d[^.!?\n]*)*").expect("valid regex"));
static NUMBER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(\d{1,3}(?:,\d{3})+|\d+)(\.\d+)?\s*(%|[A-Za-z]+)?").expect("valid regex")
});

fn weekly_mean(bundle: &WeeklyBundle, name: &str) -> Option<f64> {
    let summary = bundle.summary();
    if let Ok(f) = name.parse::<BehaviorField>() {
        return summary.behavior.get(&f).and_then(|s| s.mean);
    }
    let n: IndicatorName = name.parse().ok()?;
    summary.indicators.get(&n).and_then(|s| s.mean)
}

fn phrase_regex(p: &str) -> Regex {
    let body = p.split_whitespace().map(regex::escape).collect::<Vec<_>>().join(r"\s+");
    RegexBuilder::new(&format!(r"\b{body}\b"))
        .case_insensitive(true)
        .build()
        .expect("escaped phrase is a valid regex")
}

/// Numbers in `sentence`, each scaled by its unit suffix when the suffix is known.
fn numbers(sentence: &str, units: &BTreeMap<String, f64>) -> Vec<f64> {
    NUMBER
        .captures_iter(sentence)
        .filter_map(|c| {
            let int = c[1].replace(',', "");
            let v: f64 = format!("{int}{}", c.get(2).map_or("", |m| m.as_str())).parse().ok()?;
            let scale = c
                .get(3)
                .and_then(|u| units.get(&u.as_str().to_lowercase()))
                .copied()
                .unwrap_or(1.0);
            Some(v * scale)
        })
        .collect()
}

fn mentioned(text: &str, value: f64, m: &IndicatorMatcher, tol: f64) -> bool {
    let aliases: Vec<Regex> = m.aliases.iter().map(|a| phrase_regex(a)).collect();
    let numeric = SENTENCE
        .find_iter(text)
        .map(|s| s.as_str())
        .filter(|s| aliases.iter().any(|a| a.is_match(s)))
        .flat_map(|s| numbers(s, &m.units))
        .any(|v| (v - value).abs() <= tol * value.abs());
    numeric
        || m
            .bands
            .iter()
            .filter(|b| b.contains(value))
            .flat_map(|b| &b.phrases)
            .any(|p| phrase_regex(p).is_match(text))
}

/// Indicators expected for the scenario are those with a weekly mean; each counts
/// as recalled when a sentence naming it quotes the mean within tolerance, or
/// when the canonical phrase for the mean's band appears.
pub fn behavior_recall(
    transcript: &str,
    bundle: &WeeklyBundle,
    scenario: Scenario,
    table: &MatcherTable,
) -> RecallReport {
    let expected: Vec<(String, f64)> = table
        .expected(scenario)
        .iter()
        .filter_map(|n| weekly_mean(bundle, n).map(|v| (n.clone(), v)))
        .collect();
    let mentioned_list: Vec<String> = expected
        .iter()
        .filter(|(n, v)| {
            !transcript.trim().is_empty()
                && table
                    .indicators
                    .get(n)
                    .is_some_and(|m| mentioned(transcript, *v, m, table.tolerance))
        })
        .map(|(n, _)| n.clone())
        .collect();
    let recall_fraction = if expected.is_empty() {
        Metric::UNDEFINED
    } else {
        Metric::of(mentioned_list.len() as f64 / expected.len() as f64)
    };
    RecallReport {
        scenario,
        indicators_expected: expected.into_iter().map(|(n, _)| n).collect(),
        indicators_mentioned: mentioned_list,
        recall_fraction,
    }
}

#[derive(Serialize)]
struct RecallRow<'a> {
    label: &'a str,
    scenario: &'a str,
    expected: String,
    mentioned: String,
    recall: String,
}

/// One CSV row per labeled report.
pub fn write_recall_csv(path: &Path, rows: &[(String, RecallReport)]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for (label, r) in rows {
        w.serialize(RecallRow {
            label,
            scenario: r.scenario.as_str(),
            expected: r.indicators_expected.join(";"),
            mentioned: r.indicators_mentioned.join(";"),
            recall: r.recall_fraction.to_string(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{DailyBehavior, MentalIndicator, MentalRecordEntry};
    use chrono::{Duration, NaiveDate};

    fn bundle() -> WeeklyBundle {
        let start = NaiveDate::from_ymd_opt(2024, 3, 4).unwrap();
        let mut b = WeeklyBundle::new("p", 0, start);
        for i in 0..7 {
            let date = start + Duration::days(i);
            let mut d = DailyBehavior::new(date);
            d.steps = Some(8000.0);
            d.sleep_minutes = Some(450.0);
            d.sleep_efficiency = Some(0.9);
            b.behavior.push(d);
            b.records.push(MentalRecordEntry {
                date,
                indicators: vec![MentalIndicator::new(IndicatorName::Mood, 2.0).unwrap()],
            });
        }
        b
    }

    #[test]
    fn exact_and_off_by_ten_percent() {
        let t = MatcherTable::shipped();
        let r = behavior_recall("You walked 8,000 steps a day on average.", &bundle(), Scenario::PhysicalActivity, &t);
        assert_eq!(r.indicators_expected, vec!["steps"]);
        assert_eq!(r.indicators_mentioned, vec!["steps"]);
        assert_eq!(r.recall_fraction.get(), Some(1.0));
        let r = behavior_recall("Your steps were around 8800.", &bundle(), Scenario::PhysicalActivity, &t);
        assert!(r.indicators_mentioned.is_empty());
        let r = behavior_recall("About 8k steps daily.", &bundle(), Scenario::PhysicalActivity, &t);
        assert_eq!(r.indicators_mentioned, vec!["steps"]);
    }

    #[test]
    fn number_must_sit_next_to_an_alias() {
        let t = MatcherTable::shipped();
        let r = behavior_recall("You had 8000 reasons to smile.", &bundle(), Scenario::PhysicalActivity, &t);
        assert!(r.indicators_mentioned.is_empty());
    }

    #[test]
    fn units_and_bands() {
        let t = MatcherTable::shipped();
        let r = behavior_recall("You slept 7.5 hours with 90% sleep efficiency.", &bundle(), Scenario::RestSleep, &t);
        assert_eq!(r.indicators_mentioned, vec!["sleep_minutes", "sleep_efficiency"]);
        let r = behavior_recall("I noticed your low mood this week.", &bundle(), Scenario::MentalHealth, &t);
        assert_eq!(r.indicators_mentioned, vec!["mood"]);
    }

    #[test]
    fn nothing_mentioned_or_empty() {
        let t = MatcherTable::shipped();
        let mut b = bundle();
        b.behavior[0].calories_in = Some(2000.0);
        let r = behavior_recall("Let's talk about breakfast.", &b, Scenario::Nutrition, &t);
        assert_eq!(r.recall_fraction.get(), Some(0.0));
        let r = behavior_recall("", &b, Scenario::PhysicalActivity, &t);
        assert_eq!(r.recall_fraction.get(), Some(0.0));
        assert!(r.indicators_mentioned.is_empty());
    }
}

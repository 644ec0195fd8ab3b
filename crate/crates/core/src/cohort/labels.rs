//! Rule-based weekly risk labels with an optional expert override file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BehaviorField, CohortError, IndicatorName, LabelSource, Outcome, WeeklyBundle};

/// Declarative thresholds; a bundle is positive when any enabled clause fires.
///
/// Clauses whose inputs are absent for the week do not fire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelRule {
    /// Positive when the weekly mean mood is at or below this value.
    pub mood_mean_at_most: Option<f64>,
    /// Positive when any PHQ-4 score in the week reaches this value.
    pub phq4_at_least: Option<f64>,
    /// Positive when any PSS-4 score in the week reaches this value.
    pub pss4_at_least: Option<f64>,
    /// Joint clause: mean stress at least `.0` and mean sleep minutes below `.1`.
    pub stress_and_short_sleep: Option<(f64, f64)>,
}

impl Default for LabelRule {
    fn default() -> Self {
        Self {
            mood_mean_at_most: Some(2.0),
            phq4_at_least: Some(6.0),
            pss4_at_least: Some(9.0),
            stress_and_short_sleep: Some((4.0, 360.0)),
        }
    }
}

impl LabelRule {
    pub fn from_path(path: &Path) -> Result<Self, CohortError> {
        let text = std::fs::read_to_string(path).map_err(|source| CohortError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| CohortError::Schema {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn evaluate(&self, bundle: &WeeklyBundle) -> Outcome {
        let mood = self
            .mood_mean_at_most
            .zip(bundle.indicator_mean(IndicatorName::Mood))
            .is_some_and(|(cut, m)| m <= cut);
        let phq = self
            .phq4_at_least
            .zip(bundle.indicator_max(IndicatorName::Phq4))
            .is_some_and(|(cut, v)| v >= cut);
        let pss = self
            .pss4_at_least
            .zip(bundle.indicator_max(IndicatorName::Pss4))
            .is_some_and(|(cut, v)| v >= cut);
        let joint = self.stress_and_short_sleep.is_some_and(|(stress_cut, sleep_cut)| {
            let stress = bundle.indicator_mean(IndicatorName::Stress);
            let sleep = bundle.behavior_mean(BehaviorField::SleepMinutes);
            matches!((stress, sleep), (Some(s), Some(m)) if s >= stress_cut && m < sleep_cut)
        });
        Outcome::from_bool(mood || phq || pss || joint)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelOverride {
    pub participant_id: String,
    pub week_index: u32,
    pub label: Outcome,
}

/// Reads the `participant_id,week_index,label` override CSV.
pub fn read_overrides(path: &Path) -> Result<Vec<LabelOverride>, CohortError> {
    let err = |message: String| CohortError::Override {
        path: path.display().to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| err(e.to_string()))?;
    let mut out = Vec::new();
    for row in reader.deserialize::<LabelOverride>() {
        out.push(row.map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

/// Labels every bundle with the rule, then applies overrides.
///
/// Fails without labelling anything if an override names an unknown bundle.
pub fn assign_labels(
    bundles: &[WeeklyBundle],
    rule: &LabelRule,
    overrides: &[LabelOverride],
) -> Result<Vec<WeeklyBundle>, CohortError> {
    let keys: BTreeSet<(&str, u32)> = bundles
        .iter()
        .map(|b| (b.participant_id.as_str(), b.week_index))
        .collect();
    let unknown: Vec<String> = overrides
        .iter()
        .filter(|o| !keys.contains(&(o.participant_id.as_str(), o.week_index)))
        .map(|o| format!("{}#{}", o.participant_id, o.week_index))
        .collect();
    if !unknown.is_empty() {
        return Err(CohortError::UnknownOverrideKeys(unknown));
    }
    let by_key: BTreeMap<(&str, u32), Outcome> = overrides
        .iter()
        .map(|o| ((o.participant_id.as_str(), o.week_index), o.label))
        .collect();

    Ok(bundles
        .iter()
        .map(|b| {
            let mut b = b.clone();
            match by_key.get(&(b.participant_id.as_str(), b.week_index)) {
                Some(label) => {
                    b.label = Some(*label);
                    b.label_source = Some(LabelSource::ExpertOverride);
                }
                None => {
                    b.label = Some(rule.evaluate(&b));
                    b.label_source = Some(LabelSource::Rule);
                }
            }
            b
        })
        .collect())
}

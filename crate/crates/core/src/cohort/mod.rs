//! Cohort data model: daily behavior streams, self-reported mental records and
//! the weekly `<D, R>` bundles everything downstream consumes.

mod ingest;
mod labels;
mod weekly;

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ingest::{
    parse_globem, parse_globem_with, parse_pmdata, parse_pmdata_with, DatasetKind, DatasetSchema,
    FileError, IngestReport, RejectedRow,
};
pub use labels::{assign_labels, read_overrides, LabelOverride, LabelRule};
pub use weekly::{
    aggregate_weekly, read_bundles_jsonl, week_start_for, write_bundles_jsonl, FieldSummary,
    WeeklySummary,
};

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("cohort directory {0} does not exist")]
    MissingDirectory(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid schema file {path}: {message}")]
    Schema { path: String, message: String },
    #[error("{name} value {value} outside scale [{min}, {max}]")]
    OutOfScale {
        name: IndicatorName,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("unknown indicator {0:?}")]
    UnknownIndicator(String),
    #[error("override references unknown bundles: {}", .0.join(", "))]
    UnknownOverrideKeys(Vec<String>),
    #[error("invalid override file {path}: {message}")]
    Override { path: String, message: String },
    #[error("malformed bundle line: {0}")]
    Bundle(String),
}

/// Binary risk outcome `G`: 1 means strong indicators needing further support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Outcome {
    NoRisk,
    AtRisk,
}

impl Outcome {
    pub fn as_u8(self) -> u8 {
        match self {
            Outcome::NoRisk => 0,
            Outcome::AtRisk => 1,
        }
    }

    pub fn from_bool(at_risk: bool) -> Self {
        if at_risk {
            Outcome::AtRisk
        } else {
            Outcome::NoRisk
        }
    }

    pub fn is_at_risk(self) -> bool {
        self == Outcome::AtRisk
    }
}

impl TryFrom<u8> for Outcome {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Outcome::NoRisk),
            1 => Ok(Outcome::AtRisk),
            other => Err(format!("outcome must be 0 or 1, got {other}")),
        }
    }
}

impl From<Outcome> for u8 {
    fn from(o: Outcome) -> u8 {
        o.as_u8()
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Rule,
    ExpertOverride,
    Synthetic,
}

/// Which direction on an instrument's scale indicates more distress.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    HigherIsWorse,
    HigherIsBetter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorName {
    Fatigue,
    Mood,
    Stress,
    SleepQualitySelf,
    Readiness,
    Phq4,
    Pss4,
    PanasPos,
    PanasNeg,
}

impl IndicatorName {
    pub const ALL: [IndicatorName; 9] = [
        IndicatorName::Fatigue,
        IndicatorName::Mood,
        IndicatorName::Stress,
        IndicatorName::SleepQualitySelf,
        IndicatorName::Readiness,
        IndicatorName::Phq4,
        IndicatorName::Pss4,
        IndicatorName::PanasPos,
        IndicatorName::PanasNeg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IndicatorName::Fatigue => "fatigue",
            IndicatorName::Mood => "mood",
            IndicatorName::Stress => "stress",
            IndicatorName::SleepQualitySelf => "sleep_quality_self",
            IndicatorName::Readiness => "readiness",
            IndicatorName::Phq4 => "phq4",
            IndicatorName::Pss4 => "pss4",
            IndicatorName::PanasPos => "panas_pos",
            IndicatorName::PanasNeg => "panas_neg",
        }
    }

    /// Instrument scale `(min, max)`.
    ///
    /// Five-point wellness items are 1-5, PHQ-4 is 0-12, PSS-4 is 0-16 and the
    /// short PANAS subscales are 5-25.
    pub fn scale(self) -> (f64, f64) {
        match self {
            IndicatorName::Fatigue
            | IndicatorName::Mood
            | IndicatorName::Stress
            | IndicatorName::SleepQualitySelf
            | IndicatorName::Readiness => (1.0, 5.0),
            IndicatorName::Phq4 => (0.0, 12.0),
            IndicatorName::Pss4 => (0.0, 16.0),
            IndicatorName::PanasPos | IndicatorName::PanasNeg => (5.0, 25.0),
        }
    }

    /// Reference point separating "unremarkable" from "adverse" reports.
    pub fn neutral(self) -> f64 {
        match self {
            IndicatorName::Phq4 => 2.0,
            IndicatorName::Pss4 => 4.0,
            IndicatorName::PanasPos => 15.0,
            IndicatorName::PanasNeg => 10.0,
            _ => 3.0,
        }
    }

    pub fn polarity(self) -> Polarity {
        match self {
            IndicatorName::Mood
            | IndicatorName::SleepQualitySelf
            | IndicatorName::Readiness
            | IndicatorName::PanasPos => Polarity::HigherIsBetter,
            _ => Polarity::HigherIsWorse,
        }
    }
}

impl fmt::Display for IndicatorName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IndicatorName {
    type Err = CohortError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        let key = if key == "sleep_quality" {
            "sleep_quality_self".to_string()
        } else {
            key
        };
        IndicatorName::ALL
            .into_iter()
            .find(|n| n.as_str() == key)
            .ok_or_else(|| CohortError::UnknownIndicator(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentalIndicator {
    pub name: IndicatorName,
    pub value: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neutral: Option<f64>,
}

impl MentalIndicator {
    /// Builds an indicator on the instrument's own scale, rejecting out-of-range values.
    pub fn new(name: IndicatorName, value: f64) -> Result<Self, CohortError> {
        let (min, max) = name.scale();
        if !value.is_finite() || value < min || value > max {
            return Err(CohortError::OutOfScale {
                name,
                value,
                min,
                max,
            });
        }
        Ok(Self {
            name,
            value,
            scale_min: min,
            scale_max: max,
            neutral: Some(name.neutral()),
        })
    }

    pub fn in_scale(&self) -> bool {
        self.scale_min <= self.value && self.value <= self.scale_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentalRecordEntry {
    pub date: NaiveDate,
    pub indicators: Vec<MentalIndicator>,
}

impl MentalRecordEntry {
    pub fn get(&self, name: IndicatorName) -> Option<f64> {
        self.indicators
            .iter()
            .find(|i| i.name == name)
            .map(|i| i.value)
    }

    /// Inserts or replaces the indicator with the same name.
    pub fn upsert(&mut self, indicator: MentalIndicator) {
        match self.indicators.iter_mut().find(|i| i.name == indicator.name) {
            Some(slot) => *slot = indicator,
            None => {
                self.indicators.push(indicator);
                self.indicators.sort_by_key(|i| i.name);
            }
        }
    }
}

/// Objective daily measurements. Every field is optional: missing data stays absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DailyBehavior {
    pub date: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calories_in: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calories_burned: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exercise_minutes: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sleep_minutes: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sleep_efficiency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resting_hr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phone_usage_minutes: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location_variance: Option<f64>,
}

impl DailyBehavior {
    pub fn new(date: NaiveDate) -> Self {
        Self {
            date,
            ..Default::default()
        }
    }

    pub fn get(&self, field: BehaviorField) -> Option<f64> {
        match field {
            BehaviorField::Steps => self.steps,
            BehaviorField::CaloriesIn => self.calories_in,
            BehaviorField::CaloriesBurned => self.calories_burned,
            BehaviorField::ExerciseMinutes => self.exercise_minutes,
            BehaviorField::SleepMinutes => self.sleep_minutes,
            BehaviorField::SleepEfficiency => self.sleep_efficiency,
            BehaviorField::RestingHr => self.resting_hr,
            BehaviorField::PhoneUsageMinutes => self.phone_usage_minutes,
            BehaviorField::LocationVariance => self.location_variance,
        }
    }

    pub fn set(&mut self, field: BehaviorField, value: Option<f64>) {
        let slot = match field {
            BehaviorField::Steps => &mut self.steps,
            BehaviorField::CaloriesIn => &mut self.calories_in,
            BehaviorField::CaloriesBurned => &mut self.calories_burned,
            BehaviorField::ExerciseMinutes => &mut self.exercise_minutes,
            BehaviorField::SleepMinutes => &mut self.sleep_minutes,
            BehaviorField::SleepEfficiency => &mut self.sleep_efficiency,
            BehaviorField::RestingHr => &mut self.resting_hr,
            BehaviorField::PhoneUsageMinutes => &mut self.phone_usage_minutes,
            BehaviorField::LocationVariance => &mut self.location_variance,
        };
        *slot = value;
    }

    /// Checks the per-field invariants, returning the first violation.
    pub fn validate(&self) -> Result<(), String> {
        for field in BehaviorField::ALL {
            if let Some(v) = self.get(field) {
                if !v.is_finite() || v < 0.0 {
                    return Err(format!("{}={} must be a finite value >= 0", field, v));
                }
            }
        }
        if let Some(eff) = self.sleep_efficiency {
            if eff > 1.0 {
                return Err(format!("sleep_efficiency={eff} must be within [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorField {
    Steps,
    CaloriesIn,
    CaloriesBurned,
    ExerciseMinutes,
    SleepMinutes,
    SleepEfficiency,
    RestingHr,
    PhoneUsageMinutes,
    LocationVariance,
}

impl BehaviorField {
    pub const ALL: [BehaviorField; 9] = [
        BehaviorField::Steps,
        BehaviorField::CaloriesIn,
        BehaviorField::CaloriesBurned,
        BehaviorField::ExerciseMinutes,
        BehaviorField::SleepMinutes,
        BehaviorField::SleepEfficiency,
        BehaviorField::RestingHr,
        BehaviorField::PhoneUsageMinutes,
        BehaviorField::LocationVariance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorField::Steps => "steps",
            BehaviorField::CaloriesIn => "calories_in",
            BehaviorField::CaloriesBurned => "calories_burned",
            BehaviorField::ExerciseMinutes => "exercise_minutes",
            BehaviorField::SleepMinutes => "sleep_minutes",
            BehaviorField::SleepEfficiency => "sleep_efficiency",
            BehaviorField::RestingHr => "resting_hr",
            BehaviorField::PhoneUsageMinutes => "phone_usage_minutes",
            BehaviorField::LocationVariance => "location_variance",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            BehaviorField::Steps => "steps",
            BehaviorField::CaloriesIn | BehaviorField::CaloriesBurned => "kcal",
            BehaviorField::ExerciseMinutes
            | BehaviorField::SleepMinutes
            | BehaviorField::PhoneUsageMinutes => "min",
            BehaviorField::SleepEfficiency => "ratio",
            BehaviorField::RestingHr => "bpm",
            BehaviorField::LocationVariance => "var",
        }
    }
}

impl fmt::Display for BehaviorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BehaviorField {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BehaviorField::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown behavior field {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UserPortrait {
    pub participant_id: String,
    #[serde(default)]
    pub age_band: String,
    #[serde(default)]
    pub gender: String,
    #[serde(default)]
    pub traits: Vec<String>,
}

impl UserPortrait {
    pub fn anonymous(participant_id: impl Into<String>) -> Self {
        Self {
            participant_id: participant_id.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub portrait: UserPortrait,
    /// Sorted by date, one row per date.
    pub behavior: Vec<DailyBehavior>,
    /// Sorted by date, one entry per date.
    pub records: Vec<MentalRecordEntry>,
}

impl Participant {
    pub fn id(&self) -> &str {
        &self.portrait.participant_id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub dataset: DatasetKind,
    /// Sorted by participant id.
    pub participants: Vec<Participant>,
    #[serde(default)]
    pub report: IngestReport,
}

impl Cohort {
    pub fn empty(dataset: DatasetKind) -> Self {
        Self {
            dataset,
            participants: Vec::new(),
            report: IngestReport::default(),
        }
    }

    pub fn participant(&self, id: &str) -> Option<&Participant> {
        self.participants.iter().find(|p| p.id() == id)
    }

    pub fn accepted_behavior_rows(&self) -> usize {
        self.participants.iter().map(|p| p.behavior.len()).sum()
    }

    /// Keeps a seeded random `fraction` of participants (at least one when non-empty).
    ///
    /// Selection depends only on the sorted id list and the seed.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Cohort {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;

        let mut ids: Vec<&str> = self.participants.iter().map(|p| p.id()).collect();
        ids.sort_unstable();
        let n = self.participants.len();
        let keep = if n == 0 {
            0
        } else {
            ((n as f64 * fraction.clamp(0.0, 1.0)).round() as usize).clamp(1, n)
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ids.shuffle(&mut rng);
        let chosen: std::collections::BTreeSet<&str> = ids.into_iter().take(keep).collect();
        Cohort {
            dataset: self.dataset,
            participants: self
                .participants
                .iter()
                .filter(|p| chosen.contains(p.id()))
                .cloned()
                .collect(),
            report: self.report.clone(),
        }
    }
}

/// One participant-week `<D, R>` with an optional risk label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyBundle {
    pub participant_id: String,
    pub week_index: u32,
    pub week_start: NaiveDate,
    pub behavior: Vec<DailyBehavior>,
    pub records: Vec<MentalRecordEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_source: Option<LabelSource>,
}

impl WeeklyBundle {
    pub fn new(participant_id: impl Into<String>, week_index: u32, week_start: NaiveDate) -> Self {
        Self {
            participant_id: participant_id.into(),
            week_index,
            week_start,
            behavior: Vec::new(),
            records: Vec::new(),
            label: None,
            label_source: None,
        }
    }

    pub fn week_end(&self) -> NaiveDate {
        self.week_start + chrono::Duration::days(6)
    }

    pub fn contains_date(&self, date: NaiveDate) -> bool {
        date >= self.week_start && date <= self.week_end()
    }

    pub fn key(&self) -> (String, u32) {
        (self.participant_id.clone(), self.week_index)
    }

    pub fn is_empty(&self) -> bool {
        self.behavior.is_empty() && self.records.is_empty()
    }

    /// Checks the bundle invariants (dates within week, label/source pairing, scales).
    pub fn validate(&self) -> Result<(), String> {
        if self.behavior.len() > 7 || self.records.len() > 7 {
            return Err("a bundle holds at most 7 days".into());
        }
        for d in &self.behavior {
            if !self.contains_date(d.date) {
                return Err(format!("behavior date {} outside week", d.date));
            }
            d.validate()?;
        }
        for r in &self.records {
            if !self.contains_date(r.date) {
                return Err(format!("record date {} outside week", r.date));
            }
            for i in &r.indicators {
                if !i.in_scale() {
                    return Err(format!("{} value {} outside scale", i.name, i.value));
                }
            }
        }
        if self.label.is_some() != self.label_source.is_some() {
            return Err("label and label_source must be set together".into());
        }
        Ok(())
    }

    /// Mean of an indicator over the week's record days that report it.
    pub fn indicator_mean(&self, name: IndicatorName) -> Option<f64> {
        mean(self.records.iter().filter_map(|r| r.get(name)))
    }

    pub fn indicator_max(&self, name: IndicatorName) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.get(name))
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
    }

    pub fn behavior_mean(&self, field: BehaviorField) -> Option<f64> {
        mean(self.behavior.iter().filter_map(|d| d.get(field)))
    }

    /// Latest reported mood value in the week, if any.
    pub fn latest_mood(&self) -> Option<f64> {
        self.records
            .iter()
            .rev()
            .find_map(|r| r.get(IndicatorName::Mood))
    }
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

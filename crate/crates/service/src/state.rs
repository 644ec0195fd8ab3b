//! Service state and the events that build it.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, NaiveDate, Utc, Weekday};
use mhfa_core::analysis::{AnalysisReport, DialogueSession, Turn};
use mhfa_core::cohort::{week_start_for, MentalIndicator, MentalRecordEntry, WeeklyBundle};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaSubmission {
    pub participant_id: String,
    pub date: NaiveDate,
    pub indicators: Vec<MentalIndicator>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredReport {
    pub participant_id: String,
    pub week: u32,
    pub analysis: AnalysisReport,
    pub report_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    SessionOpened(DialogueSession),
    UserMsg(Turn),
    AssistantMsg(Turn),
    EmaSubmitted(EmaSubmission),
    ReportGenerated(StoredReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub event_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(flatten)]
    pub body: EventBody,
    pub timestamp: DateTime<Utc>,
}

/// Everything derived from the event log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceState {
    pub last_event_id: u64,
    pub sessions: BTreeMap<String, DialogueSession>,
    /// Latest submission per participant and day.
    pub ema: BTreeMap<String, BTreeMap<NaiveDate, EmaSubmission>>,
    /// Start of week 0 for participants first seen through EMA.
    pub anchors: BTreeMap<String, NaiveDate>,
    pub reports: BTreeMap<String, BTreeMap<u32, StoredReport>>,
}

impl ServiceState {
    /// Folds one event in. Deterministic, so replaying a log rebuilds the state.
    pub fn apply(&mut self, event: &SessionEvent) {
        self.last_event_id = event.event_id;
        match &event.body {
            EventBody::SessionOpened(s) => {
                self.sessions.insert(s.session_id.clone(), s.clone());
            }
            EventBody::UserMsg(t) | EventBody::AssistantMsg(t) => {
                if let Some(s) = event.session_id.as_ref().and_then(|id| self.sessions.get_mut(id)) {
                    s.turns.push(t.clone());
                }
            }
            EventBody::EmaSubmitted(sub) => {
                self.anchors
                    .entry(sub.participant_id.clone())
                    .or_insert_with(|| week_start_for(sub.date, Weekday::Mon));
                self.ema
                    .entry(sub.participant_id.clone())
                    .or_default()
                    .insert(sub.date, sub.clone());
            }
            EventBody::ReportGenerated(r) => {
                self.reports
                    .entry(r.participant_id.clone())
                    .or_default()
                    .insert(r.week, r.clone());
            }
        }
    }

    pub fn next_session_id(&self) -> String {
        format!("sess-{:06}", self.sessions.len() + 1)
    }
}

/// Preloaded weekly bundles keyed by participant.
#[derive(Debug, Clone, Default)]
pub struct BundleIndex {
    by_participant: BTreeMap<String, Vec<WeeklyBundle>>,
}

impl BundleIndex {
    pub fn new(bundles: Vec<WeeklyBundle>) -> Self {
        let mut by_participant: BTreeMap<String, Vec<WeeklyBundle>> = BTreeMap::new();
        for b in bundles {
            by_participant.entry(b.participant_id.clone()).or_default().push(b);
        }
        for v in by_participant.values_mut() {
            v.sort_by_key(|b| b.week_index);
        }
        Self { by_participant }
    }

    fn anchor(&self, participant: &str) -> Option<NaiveDate> {
        let bs = self.by_participant.get(participant)?;
        bs.iter()
            .map(|b| b.week_start - Duration::days(7 * b.week_index as i64))
            .min()
    }

    fn get(&self, participant: &str, week: u32) -> Option<&WeeklyBundle> {
        self.by_participant
            .get(participant)?
            .iter()
            .find(|b| b.week_index == week)
    }

    pub fn weeks(&self, participant: &str) -> Vec<u32> {
        self.by_participant
            .get(participant)
            .map(|v| v.iter().map(|b| b.week_index).collect())
            .unwrap_or_default()
    }
}

/// Start of week 0 for a participant, if known.
pub fn anchor_of(state: &ServiceState, index: &BundleIndex, participant: &str) -> Option<NaiveDate> {
    index
        .anchor(participant)
        .or_else(|| state.anchors.get(participant).copied())
}

/// Week index of `date`, anchoring a first-time participant at the Monday on or before it.
pub fn week_of(state: &ServiceState, index: &BundleIndex, participant: &str, date: NaiveDate) -> Option<u32> {
    let anchor = anchor_of(state, index, participant).unwrap_or_else(|| week_start_for(date, Weekday::Mon));
    let days = (date - anchor).num_days();
    (days >= 0).then_some((days / 7) as u32)
}

/// The bundle for a week: the preloaded one, if any, with EMA days laid over it.
/// A later submission for a day replaces the earlier one entirely.
pub fn current_bundle(state: &ServiceState, index: &BundleIndex, participant: &str, week: u32) -> Option<WeeklyBundle> {
    let anchor = anchor_of(state, index, participant)?;
    let base = index.get(participant, week).cloned();
    let start = anchor + Duration::days(7 * week as i64);
    let mut bundle = base.clone().unwrap_or_else(|| WeeklyBundle::new(participant, week, start));
    let mut touched = false;
    if let Some(days) = state.ema.get(participant) {
        for (date, sub) in days.range(bundle.week_start..=bundle.week_end()) {
            touched = true;
            bundle.records.retain(|r| r.date != *date);
            let mut entry = MentalRecordEntry {
                date: *date,
                indicators: Vec::new(),
            };
            for i in &sub.indicators {
                entry.upsert(i.clone());
            }
            bundle.records.push(entry);
        }
    }
    bundle.records.sort_by_key(|r| r.date);
    (base.is_some() || touched).then_some(bundle)
}

/// Most recent week with data for a participant.
pub fn latest_week(state: &ServiceState, index: &BundleIndex, participant: &str) -> Option<u32> {
    let from_index = index.weeks(participant).into_iter().max();
    let from_ema = state
        .ema
        .get(participant)
        .and_then(|d| d.keys().next_back())
        .and_then(|date| week_of(state, index, participant, *date));
    from_index.max(from_ema)
}

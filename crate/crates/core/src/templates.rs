//! Prompt templates shipped with the crate.
//!
//! Templates are plain text files under `templates/` with `{{name}}`
//! placeholders. Rendering is strict: every placeholder must be bound and every
//! binding must be used, so a renamed variable fails loudly instead of leaking
//! `{{...}}` into a prompt.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use chrono::Timelike;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("template {template}: no value for placeholder {{{{{name}}}}}")]
    Missing { template: String, name: String },
    #[error("template {template}: binding {name:?} is not used")]
    Unused { template: String, name: String },
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TemplateId {
    Analysis,
    AnalysisReminder,
    FormatFeedback,
    FormatRevision,
    Cleaning,
    SftOrcaSystem,
    SftSingleTurn,
    SftMultiTurn,
    Counterfactual,
    PersonaAssistant,
    PersonaUser,
    ToneSupportive,
    ToneNeutral,
    ToneEncouraging,
    Sentiment,
}

/// Version stamped into outputs that embed a prompt; bump when any text changes.
pub const TEMPLATE_VERSION: u32 = 1;

impl TemplateId {
    pub const ALL: [TemplateId; 15] = [
        TemplateId::Analysis,
        TemplateId::AnalysisReminder,
        TemplateId::FormatFeedback,
        TemplateId::FormatRevision,
        TemplateId::Cleaning,
        TemplateId::SftOrcaSystem,
        TemplateId::SftSingleTurn,
        TemplateId::SftMultiTurn,
        TemplateId::Counterfactual,
        TemplateId::PersonaAssistant,
        TemplateId::PersonaUser,
        TemplateId::ToneSupportive,
        TemplateId::ToneNeutral,
        TemplateId::ToneEncouraging,
        TemplateId::Sentiment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::Analysis => "analysis",
            TemplateId::AnalysisReminder => "analysis_reminder",
            TemplateId::FormatFeedback => "format_feedback",
            TemplateId::FormatRevision => "format_revision",
            TemplateId::Cleaning => "cleaning",
            TemplateId::SftOrcaSystem => "sft_orca_system",
            TemplateId::SftSingleTurn => "sft_single_turn",
            TemplateId::SftMultiTurn => "sft_multi_turn",
            TemplateId::Counterfactual => "counterfactual",
            TemplateId::PersonaAssistant => "persona_assistant",
            TemplateId::PersonaUser => "persona_user",
            TemplateId::ToneSupportive => "tone_supportive",
            TemplateId::ToneNeutral => "tone_neutral",
            TemplateId::ToneEncouraging => "tone_encouraging",
            TemplateId::Sentiment => "sentiment",
        }
    }

    pub fn text(self) -> &'static str {
        match self {
            TemplateId::Analysis => include_str!("../templates/analysis.txt"),
            TemplateId::AnalysisReminder => include_str!("../templates/analysis_reminder.txt"),
            TemplateId::FormatFeedback => include_str!("../templates/format_feedback.txt"),
            TemplateId::FormatRevision => include_str!("../templates/format_revision.txt"),
            TemplateId::Cleaning => include_str!("../templates/cleaning.txt"),
            TemplateId::SftOrcaSystem => include_str!("../templates/sft_orca_system.txt"),
            TemplateId::SftSingleTurn => include_str!("../templates/sft_single_turn.txt"),
            TemplateId::SftMultiTurn => include_str!("../templates/sft_multi_turn.txt"),
            TemplateId::Counterfactual => include_str!("../templates/counterfactual.txt"),
            TemplateId::PersonaAssistant => include_str!("../templates/persona_assistant.txt"),
            TemplateId::PersonaUser => include_str!("../templates/persona_user.txt"),
            TemplateId::ToneSupportive => include_str!("../templates/tone_supportive.txt"),
            TemplateId::ToneNeutral => include_str!("../templates/tone_neutral.txt"),
            TemplateId::ToneEncouraging => include_str!("../templates/tone_encouraging.txt"),
            TemplateId::Sentiment => include_str!("../templates/sentiment.txt"),
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(self) -> Vec<String> {
        let mut seen = Vec::new();
        for c in PLACEHOLDER.captures_iter(self.text()) {
            let name = c[1].to_string();
            if !seen.contains(&name) {
                seen.push(name);
            }
        }
        seen
    }

    pub fn render(self, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        render_str(self.name(), self.text(), vars)
    }
}

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{\{([a-z_]+)\}\}").expect("valid regex"));

pub fn render_str(name: &str, text: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
    let map: BTreeMap<&str, &str> = vars.iter().copied().collect();
    let mut used = std::collections::BTreeSet::new();
    let mut missing = None;
    let out = PLACEHOLDER.replace_all(text, |c: &regex::Captures| {
        let key = c.get(1).expect("group").as_str();
        match map.get(key) {
            Some(v) => {
                used.insert(key.to_string());
                v.to_string()
            }
            None => {
                missing.get_or_insert_with(|| key.to_string());
                String::new()
            }
        }
    });
    if let Some(name_missing) = missing {
        return Err(TemplateError::Missing {
            template: name.to_string(),
            name: name_missing,
        });
    }
    if let Some(unused) = map.keys().find(|k| !used.contains(**k)) {
        return Err(TemplateError::Unused {
            template: name.to_string(),
            name: unused.to_string(),
        });
    }
    Ok(out.into_owned())
}

/// Conversation scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    PhysicalActivity,
    Nutrition,
    RestSleep,
    MentalHealth,
    Open,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::PhysicalActivity,
        Scenario::Nutrition,
        Scenario::RestSleep,
        Scenario::MentalHealth,
        Scenario::Open,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::PhysicalActivity => "physical_activity",
            Scenario::Nutrition => "nutrition",
            Scenario::RestSleep => "rest_sleep",
            Scenario::MentalHealth => "mental_health",
            Scenario::Open => "open",
        }
    }

    /// Human phrase used inside prompts.
    pub fn phrase(self) -> &'static str {
        match self {
            Scenario::PhysicalActivity => "physical activity",
            Scenario::Nutrition => "nutrition",
            Scenario::RestSleep => "rest and sleep",
            Scenario::MentalHealth => "mental health",
            Scenario::Open => "open conversation",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = TemplateError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.as_str() == s.trim())
            .ok_or_else(|| TemplateError::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayPeriod {
    Morning,
    Day,
    Evening,
    Night,
}

impl DayPeriod {
    /// 05-10 morning, 11-16 day, 17-21 evening, 22-04 night (local hour).
    pub fn from_hour(hour: u32) -> Self {
        match hour {
            5..=10 => DayPeriod::Morning,
            11..=16 => DayPeriod::Day,
            17..=21 => DayPeriod::Evening,
            _ => DayPeriod::Night,
        }
    }

    pub fn from_time(t: impl Timelike) -> Self {
        Self::from_hour(t.hour())
    }

    fn as_str(self) -> &'static str {
        match self {
            DayPeriod::Morning => "morning",
            DayPeriod::Day => "day",
            DayPeriod::Evening => "evening",
            DayPeriod::Night => "night",
        }
    }

    /// Topic an open-ended conversation starts with at this time of day.
    pub fn default_scenario(self) -> Scenario {
        match self {
            DayPeriod::Morning => Scenario::RestSleep,
            DayPeriod::Day => Scenario::Nutrition,
            DayPeriod::Evening => Scenario::PhysicalActivity,
            DayPeriod::Night => Scenario::MentalHealth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Opener {
    pub id: String,
    pub scenario: Scenario,
    pub text: String,
}

struct OpenerRow {
    id: &'static str,
    scenario: &'static str,
    period: &'static str,
    text: &'static str,
}

static OPENERS: LazyLock<Vec<OpenerRow>> = LazyLock::new(|| {
    include_str!("../templates/openers.tsv")
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut parts = l.splitn(4, '\t');
            let mut next = || parts.next().expect("openers.tsv has four columns");
            OpenerRow {
                id: next(),
                scenario: next(),
                period: next(),
                text: next(),
            }
        })
        .collect()
});

/// Picks the conversation opener for a scenario at a local hour.
///
/// `open` is first resolved to the topic that fits the time of day.
pub fn select_opener(scenario: Scenario, hour: u32) -> Opener {
    let period = DayPeriod::from_hour(hour);
    let scenario = match scenario {
        Scenario::Open => period.default_scenario(),
        s => s,
    };
    let row = OPENERS
        .iter()
        .find(|r| r.scenario == scenario.as_str() && r.period == period.as_str())
        .or_else(|| OPENERS.iter().find(|r| r.scenario == scenario.as_str()))
        .expect("every scenario has an opener");
    Opener {
        id: row.id.to_string(),
        scenario,
        text: row.text.to_string(),
    }
}

/// Opener ids belonging to one scenario family (e.g. `"nu."` for nutrition).
pub fn opener_family(scenario: Scenario) -> Vec<&'static str> {
    OPENERS
        .iter()
        .filter(|r| r.scenario == scenario.as_str())
        .map(|r| r.id)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_template_loads_and_renders_with_its_placeholders() {
        for id in TemplateId::ALL {
            let names = id.placeholders();
            let vars: Vec<(&str, &str)> = names.iter().map(|n| (n.as_str(), "X")).collect();
            let out = id.render(&vars).unwrap();
            assert!(!out.contains("{{"), "{}", id.name());
        }
    }

    #[test]
    fn strict_rendering() {
        let err = TemplateId::Cleaning.render(&[]).unwrap_err();
        assert!(matches!(err, TemplateError::Missing { .. }));
        let err = TemplateId::Cleaning
            .render(&[("text", "a"), ("extra", "b")])
            .unwrap_err();
        assert!(matches!(err, TemplateError::Unused { .. }));
    }

    #[test]
    fn analysis_template_has_five_headers() {
        let t = TemplateId::Analysis.text();
        for h in ["Phase 1: Synthesis", "Phase 5: Outcome", "Outcome: 1"] {
            assert!(t.contains(h));
        }
    }

    #[test]
    fn late_rest_sleep_opener_mentions_sleep() {
        let o = select_opener(Scenario::RestSleep, 23);
        assert_eq!(o.id, "rs.night");
        assert!(o.text.contains("sleep"));
    }

    #[test]
    fn open_scenario_follows_time_of_day() {
        assert_eq!(select_opener(Scenario::Open, 7).scenario, Scenario::RestSleep);
        assert_eq!(select_opener(Scenario::Open, 12).scenario, Scenario::Nutrition);
        for s in Scenario::ALL {
            for h in 0..24 {
                let o = select_opener(s, h);
                assert!(opener_family(o.scenario).contains(&o.id.as_str()));
            }
        }
    }
}

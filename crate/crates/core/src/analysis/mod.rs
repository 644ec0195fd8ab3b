//! Five-phase analysis, daily monitoring turns and agent-vs-agent simulation.

mod dialogue;

use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Outcome, UserPortrait, WeeklyBundle};
use crate::gateway::{ChatMessage, Gateway, GatewayError, GenParams};
use crate::report::{render, FormatSpec, ReportError};
use crate::templates::{TemplateError, TemplateId};

pub use dialogue::{
    assemble_monitor_prompt, monitor_turn, open_session, read_transcript_jsonl, simulate_dialogue,
    write_transcript_jsonl, AgentConfig, Clock, DialogueSession, MonitorConfig, SharedSession,
    SimulationResult, Speaker, StepClock, SystemClock, ToneDirective, TranscriptLine, Turn,
    STOP_TOKEN,
};

pub const PHASE_TITLES: [&str; 5] = [
    "Synthesis",
    "Behavior Analysis",
    "Correlation Analysis",
    "Recommendation",
    "Outcome",
];

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("bundle {0} has no mental record days")]
    NoRecords(String),
    #[error("no `Outcome:` marker found")]
    MissingOutcome,
    #[error("outcome value {0:?} is not 0 or 1")]
    NonBinaryOutcome(String),
    #[error("analysis could not be parsed after retry: {reason}")]
    Unparseable { reason: String, raw: String },
    #[error("session {0} already has a turn in progress")]
    SessionBusy(String),
    #[error("invalid agent configuration: {0}")]
    AgentConfig(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSpan {
    pub phase: usize,
    /// Character range into `raw_text`.
    pub chars: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub phases: Vec<String>,
    pub outcome: Outcome,
    pub evidence_spans: Vec<EvidenceSpan>,
    pub raw_text: String,
}

impl AnalysisReport {
    /// Text of phases 1-4, the evidence the outcome rests on.
    pub fn evidence_text(&self) -> String {
        self.phases[..4].join("\n\n")
    }
}

static OUTCOME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)outcome[ \t]*:[ \t]*([^\s]*)").expect("valid regex"));

static PHASE_HEADER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?im)^[ \t#*_>]*phase[ \t]+([1-5])\b[^\n]*$").expect("valid regex")
});

static NUMBER_SENTENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[^.!?\n]*\d[^.!?\n]*[.!?]?").expect("valid regex"));

/// Reads the binary outcome from the last `Outcome:` marker (case-insensitive).
pub fn parse_outcome(text: &str) -> Result<Outcome, AnalysisError> {
    let cap = OUTCOME
        .captures_iter(text)
        .last()
        .ok_or(AnalysisError::MissingOutcome)?;
    let raw = &cap[1];
    let value = raw.trim_matches(|c: char| !c.is_ascii_alphanumeric());
    match value {
        "0" => Ok(Outcome::NoRisk),
        "1" => Ok(Outcome::AtRisk),
        _ => Err(AnalysisError::NonBinaryOutcome(raw.to_string())),
    }
}

/// Splits text on the five phase headers. Returns each phase body and its
/// byte range, or the list of missing phase numbers.
fn split_phases(text: &str) -> Result<Vec<(String, Range<usize>)>, Vec<usize>> {
    let mut found: Vec<(usize, Range<usize>)> = Vec::new();
    for cap in PHASE_HEADER.captures_iter(text) {
        let n: usize = cap[1].parse().expect("digit");
        let expected = found.len() + 1;
        if n == expected {
            let m = cap.get(0).expect("match");
            found.push((n, m.start()..m.end()));
        }
    }
    if found.len() < 5 {
        let have: Vec<usize> = found.iter().map(|(n, _)| *n).collect();
        return Err((1..=5).filter(|n| !have.contains(n)).collect());
    }
    let mut out = Vec::with_capacity(5);
    for i in 0..5 {
        let start = found[i].1.end;
        let end = found.get(i + 1).map_or(text.len(), |f| f.1.start);
        let body = &text[start..end];
        let trimmed_start = start + (body.len() - body.trim_start().len());
        let trimmed = body.trim();
        out.push((trimmed.to_string(), trimmed_start..trimmed_start + trimmed.len()));
    }
    Ok(out)
}

fn char_index(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

/// Parses a raw completion into a report. Errors name what is missing.
pub fn parse_analysis(raw: &str) -> Result<AnalysisReport, String> {
    let phases = split_phases(raw).map_err(|missing| {
        let names: Vec<String> = missing
            .iter()
            .map(|n| format!("Phase {n}: {}", PHASE_TITLES[n - 1]))
            .collect();
        names.join(", ")
    })?;
    let outcome = parse_outcome(&phases[4].0).map_err(|e| format!("phase 5 outcome: {e}"))?;
    let mut evidence_spans = Vec::new();
    for (i, (_, range)) in phases.iter().enumerate().take(4) {
        let body = &raw[range.clone()];
        for m in NUMBER_SENTENCE.find_iter(body) {
            let s = range.start + m.start();
            let e = range.start + m.end();
            let lead = raw[s..e].len() - raw[s..e].trim_start().len();
            evidence_spans.push(EvidenceSpan {
                phase: i + 1,
                chars: char_index(raw, s + lead)..char_index(raw, e),
            });
        }
    }
    Ok(AnalysisReport {
        phases: phases.into_iter().map(|(t, _)| t).collect(),
        outcome,
        evidence_spans,
        raw_text: raw.to_string(),
    })
}

pub fn analysis_prompt(
    bundle: &WeeklyBundle,
    portrait: &UserPortrait,
    spec: &FormatSpec,
) -> Result<String, AnalysisError> {
    let table = render(bundle, portrait, spec)?;
    let mut profile = format!(
        "Participant {}, age band {}, gender {}",
        portrait.participant_id,
        if portrait.age_band.is_empty() { "unknown" } else { &portrait.age_band },
        if portrait.gender.is_empty() { "unknown" } else { &portrait.gender },
    );
    for t in &portrait.traits {
        profile.push_str("\n- ");
        profile.push_str(t);
    }
    Ok(TemplateId::Analysis.render(&[("portrait", &profile), ("report", &table)])?)
}

/// Runs the five-phase analysis for one week. One retry with a structure
/// reminder is made if the first reply cannot be parsed.
pub fn generate_analysis(
    bundle: &WeeklyBundle,
    portrait: &UserPortrait,
    spec: &FormatSpec,
    gateway: &Gateway,
) -> Result<AnalysisReport, AnalysisError> {
    if bundle.records.is_empty() {
        return Err(AnalysisError::NoRecords(format!(
            "{}#{}",
            bundle.participant_id, bundle.week_index
        )));
    }
    let prompt = analysis_prompt(bundle, portrait, spec)?;
    let params = GenParams::default();
    let mut messages = vec![ChatMessage::user(prompt)];
    let first = gateway.chat(&messages, &params)?.text;
    let reason = match parse_analysis(&first) {
        Ok(r) => return Ok(r),
        Err(reason) => reason,
    };
    log::debug!("analysis retry for {}: {reason}", bundle.participant_id);
    messages.push(ChatMessage::assistant(first));
    messages.push(ChatMessage::user(
        TemplateId::AnalysisReminder.render(&[("missing", &reason)])?,
    ));
    let second = gateway.chat(&messages, &params)?.text;
    parse_analysis(&second).map_err(|reason| AnalysisError::Unparseable {
        reason,
        raw: second,
    })
}

/// Canned five-phase text; used by scripted backends and tests.
pub fn compose_report(phases: [&str; 4], outcome: Outcome) -> String {
    let mut s = String::new();
    for (i, body) in phases.iter().enumerate() {
        s.push_str(&format!("Phase {}: {}\n{}\n\n", i + 1, PHASE_TITLES[i], body));
    }
    s.push_str(&format!("Phase 5: Outcome\nOutcome: {}\n", outcome.as_u8()));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{IndicatorName, MentalIndicator, MentalRecordEntry};
    use crate::gateway::{FnBackend, MockBackend, MockRule};
    use chrono::NaiveDate;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn bundle() -> WeeklyBundle {
        let d = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        let mut b = WeeklyBundle::new("p1", 0, d);
        b.records.push(MentalRecordEntry {
            date: d,
            indicators: vec![MentalIndicator::new(IndicatorName::Mood, 4.0).unwrap()],
        });
        b
    }

    #[test]
    fn outcome_marker_rules() {
        assert_eq!(parse_outcome("...\nOutcome: 1").unwrap(), Outcome::AtRisk);
        assert_eq!(parse_outcome("Outcome: 0 then OUTCOME: 1").unwrap(), Outcome::AtRisk);
        assert_eq!(parse_outcome("`Outcome: 0`.").unwrap(), Outcome::NoRisk);
        assert!(matches!(
            parse_outcome("Outcome: maybe"),
            Err(AnalysisError::NonBinaryOutcome(_))
        ));
        assert!(matches!(parse_outcome("nothing"), Err(AnalysisError::MissingOutcome)));
    }

    #[test]
    fn parses_five_phases_and_evidence() {
        let raw = compose_report(
            ["A calm week.", "Steps averaged 9000. Sleep was fine.", "Mood matched.", "Keep it up."],
            Outcome::NoRisk,
        );
        let r = parse_analysis(&raw).unwrap();
        assert_eq!(r.phases.len(), 5);
        assert_eq!(r.phases[1], "Steps averaged 9000. Sleep was fine.");
        assert_eq!(r.outcome, Outcome::NoRisk);
        assert_eq!(r.evidence_spans.len(), 1);
        let span = &r.evidence_spans[0];
        let text: String = raw.chars().skip(span.chars.start).take(span.chars.len()).collect();
        assert_eq!(text, "Steps averaged 9000.");
    }

    #[test]
    fn header_variants_accepted() {
        let raw = "## Phase 1 — Synthesis\na\n**Phase 2 - Behavior Analysis**\nb\nPhase 3: Correlation Analysis\nc\nPhase 4. Recommendation\nd\nPhase 5 Outcome\nOutcome: 1";
        assert_eq!(parse_analysis(raw).unwrap().outcome, Outcome::AtRisk);
    }

    #[test]
    fn canned_report_parsed() {
        let reply = compose_report(["s", "b", "c", "This reinforces this positive outcome."], Outcome::NoRisk);
        let gw = Gateway::new(MockBackend::new(vec![MockRule::reply("*", reply)]).unwrap());
        let r = generate_analysis(&bundle(), &UserPortrait::anonymous("p1"), &FormatSpec::default(), &gw)
            .unwrap();
        assert_eq!(r.outcome, Outcome::NoRisk);
        assert!(r.phases[3].contains("positive"));
    }

    #[test]
    fn four_sections_trigger_one_retry_then_error() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let four = "Phase 1: Synthesis\na\nPhase 2: Behavior Analysis\nb\nPhase 3: Correlation Analysis\nc\nPhase 4: Recommendation\nd\nOutcome: 1";
        let gw = Gateway::new(FnBackend::chat("four", move |_| {
            c.fetch_add(1, Ordering::SeqCst);
            four.to_string()
        }));
        let err = generate_analysis(&bundle(), &UserPortrait::anonymous("p1"), &FormatSpec::default(), &gw)
            .unwrap_err();
        assert_eq!(calls.load(Ordering::SeqCst), 2);
        match err {
            AnalysisError::Unparseable { reason, raw } => {
                assert!(reason.contains("Phase 5"));
                assert_eq!(raw, four);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn retry_can_recover() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let gw = Gateway::new(FnBackend::chat("flaky", move |_| {
            if c.fetch_add(1, Ordering::SeqCst) == 0 {
                "Outcome: 1".into()
            } else {
                compose_report(["a", "b", "c", "d"], Outcome::AtRisk)
            }
        }));
        let r = generate_analysis(&bundle(), &UserPortrait::anonymous("p1"), &FormatSpec::default(), &gw)
            .unwrap();
        assert_eq!(r.outcome, Outcome::AtRisk);
    }

    #[test]
    fn bundle_without_records_rejected() {
        let mut b = bundle();
        b.records.clear();
        let gw = Gateway::new(MockBackend::new(vec![MockRule::reply("*", "x")]).unwrap());
        assert!(matches!(
            generate_analysis(&b, &UserPortrait::anonymous("p1"), &FormatSpec::default(), &gw),
            Err(AnalysisError::NoRecords(_))
        ));
    }
}

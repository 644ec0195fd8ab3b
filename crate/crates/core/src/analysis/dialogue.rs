//! Monitoring dialogues: prompt assembly with tone control, session state, and
//! simulated assistant/user conversations.

use std::path::Path;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::cohort::{UserPortrait, WeeklyBundle};
use crate::gateway::{ChatMessage, Gateway, GenParams};
use crate::report::{render, FormatSpec};
use crate::templates::{select_opener, Scenario, TemplateId};

/// Literal a simulated user emits to end the conversation.
pub const STOP_TOKEN: &str = "[END_CHAT]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Assistant,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Speaker,
    pub text: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub session_id: String,
    pub participant_id: String,
    pub scenario: Scenario,
    pub turns: Vec<Turn>,
    /// Latest self-reported mood (1-5), if any.
    pub mood_context: Option<f64>,
    /// Rendered weekly data the assistant may refer to.
    pub report: Option<String>,
    pub opener_id: String,
    pub opener_text: String,
    /// Extra assistant instructions appended to the persona prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona_note: Option<String>,
}

/// Source of timestamps. Deterministic clocks make transcripts reproducible.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Starts at `start` and advances by `step` on every reading.
pub struct StepClock {
    start: DateTime<Utc>,
    step_ms: i64,
    ticks: AtomicI64,
}

impl StepClock {
    pub fn new(start: DateTime<Utc>, step: Duration) -> Self {
        Self {
            start,
            step_ms: step.num_milliseconds(),
            ticks: AtomicI64::new(0),
        }
    }
}

impl Clock for StepClock {
    fn now(&self) -> DateTime<Utc> {
        let n = self.ticks.fetch_add(1, Ordering::SeqCst);
        self.start + Duration::milliseconds(n * self.step_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToneDirective {
    Supportive,
    Neutral,
    Encouraging,
}

impl ToneDirective {
    /// Below 3 supportive, exactly 3 neutral, above 3 encouraging; unknown mood is neutral.
    pub fn from_mood(mood: Option<f64>) -> Self {
        match mood {
            Some(m) if m < 3.0 => ToneDirective::Supportive,
            Some(m) if m > 3.0 => ToneDirective::Encouraging,
            _ => ToneDirective::Neutral,
        }
    }

    pub fn text(self) -> &'static str {
        match self {
            ToneDirective::Supportive => TemplateId::ToneSupportive.text(),
            ToneDirective::Neutral => TemplateId::ToneNeutral.text(),
            ToneDirective::Encouraging => TemplateId::ToneEncouraging.text(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    /// Number of most recent turns kept in the prompt.
    pub window: usize,
    pub params: GenParams,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            window: 12,
            params: GenParams::default(),
        }
    }
}

/// New session whose opener fits the scenario and the participant's local hour.
pub fn open_session(
    session_id: impl Into<String>,
    participant_id: impl Into<String>,
    scenario: Scenario,
    report: Option<String>,
    mood_context: Option<f64>,
    local_hour: u32,
) -> DialogueSession {
    let opener = select_opener(scenario, local_hour);
    DialogueSession {
        session_id: session_id.into(),
        participant_id: participant_id.into(),
        scenario: opener.scenario,
        turns: Vec::new(),
        mood_context,
        report,
        opener_id: opener.id,
        opener_text: opener.text,
        persona_note: None,
    }
}

fn assistant_system_prompt(session: &DialogueSession) -> String {
    let persona = TemplateId::PersonaAssistant
        .render(&[
            ("scenario", session.scenario.phrase()),
            ("report", session.report.as_deref().unwrap_or("not available")),
        ])
        .expect("template variables match");
    let mut system = format!(
        "{}\n{}",
        persona.trim_end(),
        ToneDirective::from_mood(session.mood_context).text().trim_end()
    );
    if let Some(note) = &session.persona_note {
        system.push('\n');
        system.push_str(note.trim_end());
    }
    if session.turns.is_empty() {
        system.push_str("\nOpen the conversation in the spirit of: ");
        system.push_str(&session.opener_text);
    }
    system
}

/// Messages sent for the next assistant reply. Pure in its inputs.
pub fn assemble_monitor_prompt(
    session: &DialogueSession,
    user_message: Option<&str>,
    window: usize,
) -> Vec<ChatMessage> {
    let mut messages = vec![ChatMessage::system(assistant_system_prompt(session))];
    let skip = session.turns.len().saturating_sub(window);
    for t in &session.turns[skip..] {
        messages.push(match t.role {
            Speaker::Assistant => ChatMessage::assistant(t.text.clone()),
            Speaker::User => ChatMessage::user(t.text.clone()),
        });
    }
    if let Some(m) = user_message {
        messages.push(ChatMessage::user(m));
    }
    messages
}

fn push_turn(session: &mut DialogueSession, role: Speaker, text: String, clock: &dyn Clock) {
    let mut ts = clock.now();
    if let Some(last) = session.turns.last() {
        if ts <= last.timestamp {
            ts = last.timestamp + Duration::milliseconds(1);
        }
    }
    session.turns.push(Turn {
        role,
        text,
        timestamp: ts,
    });
}

/// One user message and the assistant's reply. On gateway failure the session is left unchanged.
pub fn monitor_turn(
    session: &mut DialogueSession,
    user_message: &str,
    gateway: &Gateway,
    config: &MonitorConfig,
    clock: &dyn Clock,
) -> Result<String, AnalysisError> {
    let messages = assemble_monitor_prompt(session, Some(user_message), config.window);
    let reply = gateway.chat(&messages, &config.params)?.text;
    push_turn(session, Speaker::User, user_message.to_string(), clock);
    push_turn(session, Speaker::Assistant, reply.clone(), clock);
    Ok(reply)
}

/// Session guarded against concurrent turns: a second caller is rejected, not queued.
#[derive(Debug, Clone)]
pub struct SharedSession {
    id: String,
    inner: Arc<Mutex<DialogueSession>>,
}

impl SharedSession {
    pub fn new(session: DialogueSession) -> Self {
        Self {
            id: session.session_id.clone(),
            inner: Arc::new(Mutex::new(session)),
        }
    }

    pub fn snapshot(&self) -> DialogueSession {
        self.inner.lock().clone()
    }

    pub fn turn(
        &self,
        user_message: &str,
        gateway: &Gateway,
        config: &MonitorConfig,
        clock: &dyn Clock,
    ) -> Result<String, AnalysisError> {
        let mut guard = self
            .inner
            .try_lock()
            .ok_or_else(|| AnalysisError::SessionBusy(self.id.clone()))?;
        monitor_turn(&mut guard, user_message, gateway, config, clock)
    }
}

pub struct AgentConfig<'a> {
    pub role: Speaker,
    pub persona_prompt: String,
    pub bundle: Option<WeeklyBundle>,
    pub portrait: Option<UserPortrait>,
    pub gateway: &'a Gateway,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub session: DialogueSession,
    pub stopped_by_user: bool,
    /// Set when an agent failed; the transcript holds the turns before the failure.
    pub failure: Option<String>,
}

fn agent_report(cfg: &AgentConfig<'_>) -> Result<Option<String>, AnalysisError> {
    match &cfg.bundle {
        None => Ok(None),
        Some(b) => {
            let portrait = cfg
                .portrait
                .clone()
                .unwrap_or_else(|| UserPortrait::anonymous(b.participant_id.clone()));
            Ok(Some(render(b, &portrait, &FormatSpec::default())?))
        }
    }
}

fn user_messages(session: &DialogueSession, persona: &str, report: Option<&str>) -> Vec<ChatMessage> {
    let system = TemplateId::PersonaUser
        .render(&[("persona", persona), ("report", report.unwrap_or("not available"))])
        .expect("template variables match");
    let mut messages = vec![ChatMessage::system(system)];
    // the user agent sees the assistant as its interlocutor
    for t in &session.turns {
        messages.push(match t.role {
            Speaker::Assistant => ChatMessage::user(t.text.clone()),
            Speaker::User => ChatMessage::assistant(t.text.clone()),
        });
    }
    messages
}

/// Alternates assistant and user agents, assistant first, until `max_turns`
/// or the user emits [`STOP_TOKEN`].
pub fn simulate_dialogue(
    session_id: &str,
    assistant: &AgentConfig<'_>,
    user: &AgentConfig<'_>,
    scenario: Scenario,
    max_turns: usize,
    local_hour: u32,
    clock: &dyn Clock,
) -> Result<SimulationResult, AnalysisError> {
    if assistant.role != Speaker::Assistant || user.role != Speaker::User {
        return Err(AnalysisError::AgentConfig("agent roles must be assistant and user".into()));
    }
    let Some(bundle) = &assistant.bundle else {
        return Err(AnalysisError::AgentConfig("assistant agent needs a weekly bundle".into()));
    };
    let assistant_report = agent_report(assistant)?;
    let user_report = agent_report(user)?;
    let mut session = open_session(
        session_id,
        bundle.participant_id.clone(),
        scenario,
        assistant_report,
        bundle.latest_mood(),
        local_hour,
    );
    if !assistant.persona_prompt.trim().is_empty() {
        session.persona_note = Some(assistant.persona_prompt.clone());
    }
    let params = GenParams::default();
    let mut stopped_by_user = false;
    let mut failure = None;

    for i in 0..max_turns {
        let (role, result) = if i % 2 == 0 {
            let messages = assemble_monitor_prompt(&session, None, MonitorConfig::default().window);
            (Speaker::Assistant, assistant.gateway.chat(&messages, &params))
        } else {
            let messages = user_messages(&session, &user.persona_prompt, user_report.as_deref());
            (Speaker::User, user.gateway.chat(&messages, &params))
        };
        match result {
            Ok(c) => {
                let stop = role == Speaker::User && c.text.contains(STOP_TOKEN);
                push_turn(&mut session, role, c.text, clock);
                if stop {
                    stopped_by_user = true;
                    break;
                }
            }
            Err(e) => {
                failure = Some(format!("{role:?} agent failed: {e}"));
                break;
            }
        }
    }
    Ok(SimulationResult {
        session,
        stopped_by_user,
        failure,
    })
}

/// One JSONL line of a persisted transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TranscriptLine {
    Meta {
        session_id: String,
        participant_id: String,
        scenario: Scenario,
        opener_id: String,
        mood_context: Option<f64>,
    },
    Turn(Turn),
    Failure {
        message: String,
    },
}

pub fn write_transcript_jsonl(path: &Path, result: &SimulationResult) -> Result<(), AnalysisError> {
    let s = &result.session;
    let mut lines = vec![TranscriptLine::Meta {
        session_id: s.session_id.clone(),
        participant_id: s.participant_id.clone(),
        scenario: s.scenario,
        opener_id: s.opener_id.clone(),
        mood_context: s.mood_context,
    }];
    lines.extend(s.turns.iter().cloned().map(TranscriptLine::Turn));
    if let Some(f) = &result.failure {
        lines.push(TranscriptLine::Failure { message: f.clone() });
    }
    crate::util::write_jsonl(path, &lines)?;
    Ok(())
}

pub fn read_transcript_jsonl(path: &Path) -> Result<Vec<TranscriptLine>, AnalysisError> {
    Ok(crate::util::read_jsonl(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{IndicatorName, MentalIndicator, MentalRecordEntry};
    use crate::gateway::{FnBackend, Request, Response};
    use crate::templates::opener_family;
    use chrono::{NaiveDate, TimeZone};

    fn clock() -> StepClock {
        StepClock::new(Utc.with_ymd_and_hms(2024, 1, 1, 8, 0, 0).unwrap(), Duration::seconds(5))
    }

    fn session(mood: Option<f64>) -> DialogueSession {
        open_session("s1", "p1", Scenario::MentalHealth, Some("table".into()), mood, 9)
    }

    fn echo_gateway() -> Gateway {
        Gateway::new(FnBackend::chat("echo", |p| format!("reply to {} chars", p.len())))
    }

    #[test]
    fn tone_follows_mood() {
        assert_eq!(ToneDirective::from_mood(Some(1.0)), ToneDirective::Supportive);
        assert_eq!(ToneDirective::from_mood(Some(3.0)), ToneDirective::Neutral);
        assert_eq!(ToneDirective::from_mood(Some(4.5)), ToneDirective::Encouraging);
        let prompt = assemble_monitor_prompt(&session(Some(1.0)), Some("hi"), 12);
        assert!(prompt[0].content.contains(TemplateId::ToneSupportive.text().trim()));
    }

    #[test]
    fn window_keeps_last_n_turns() {
        let mut s = session(None);
        let c = clock();
        for i in 0..20 {
            let role = if i % 2 == 0 { Speaker::User } else { Speaker::Assistant };
            push_turn(&mut s, role, format!("turn-{i:02}"), &c);
        }
        let prompt = assemble_monitor_prompt(&s, Some("new"), 12);
        let joined: String = prompt.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
        let kept = (0..20).filter(|i| joined.contains(&format!("turn-{i:02}"))).count();
        assert_eq!(kept, 12);
        assert!(joined.contains("turn-19") && !joined.contains("turn-07"));
        assert_eq!(prompt.len(), 1 + 12 + 1);
    }

    #[test]
    fn late_rest_sleep_opener_references_sleep() {
        let s = open_session("s", "p", Scenario::RestSleep, None, None, 23);
        let prompt = assemble_monitor_prompt(&s, Some("hey"), 12);
        assert!(prompt[0].content.contains("adequate rest"));
    }

    #[test]
    fn prompt_assembly_is_deterministic() {
        let a = assemble_monitor_prompt(&session(Some(2.0)), Some("x"), 12);
        let b = assemble_monitor_prompt(&session(Some(2.0)), Some("x"), 12);
        assert_eq!(a, b);
    }

    #[test]
    fn failed_turn_leaves_session_unchanged() {
        let gw = Gateway::new(FnBackend::new("down", |_: &Request| -> Result<Response, _> {
            Err(crate::gateway::GatewayError::Http {
                status: 400,
                body: "bad".into(),
            })
        }));
        let mut s = session(None);
        assert!(monitor_turn(&mut s, "hello", &gw, &MonitorConfig::default(), &clock()).is_err());
        assert!(s.turns.is_empty());
        monitor_turn(&mut s, "hello", &echo_gateway(), &MonitorConfig::default(), &clock()).unwrap();
        assert_eq!(s.turns.len(), 2);
        assert!(s.turns[0].timestamp < s.turns[1].timestamp);
    }

    #[test]
    fn shared_session_rejects_concurrent_turns() {
        let shared = SharedSession::new(session(None));
        let _held = shared.inner.lock();
        let err = shared
            .turn("x", &echo_gateway(), &MonitorConfig::default(), &clock())
            .unwrap_err();
        assert!(matches!(err, AnalysisError::SessionBusy(_)));
    }

    fn bundle() -> WeeklyBundle {
        let d = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        let mut b = WeeklyBundle::new("p1", 0, d);
        b.records.push(MentalRecordEntry {
            date: d,
            indicators: vec![MentalIndicator::new(IndicatorName::Mood, 2.0).unwrap()],
        });
        b
    }

    fn scripted(lines: &'static [&'static str]) -> Gateway {
        let n = std::sync::atomic::AtomicUsize::new(0);
        Gateway::new(FnBackend::chat("script", move |_| {
            let i = n.fetch_add(1, Ordering::SeqCst);
            lines[i.min(lines.len() - 1)].to_string()
        }))
    }

    #[test]
    fn simulation_runs_to_max_turns() {
        let a = scripted(&["Hello, how are you?", "Glad to hear."]);
        let u = scripted(&["Fine.", "Thanks."]);
        let ac = AgentConfig { role: Speaker::Assistant, persona_prompt: String::new(), bundle: Some(bundle()), portrait: None, gateway: &a };
        let uc = AgentConfig { role: Speaker::User, persona_prompt: "a student".into(), bundle: None, portrait: None, gateway: &u };
        let r = simulate_dialogue("sim", &ac, &uc, Scenario::Nutrition, 4, 12, &clock()).unwrap();
        let texts: Vec<&str> = r.session.turns.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, ["Hello, how are you?", "Fine.", "Glad to hear.", "Thanks."]);
        assert!(opener_family(Scenario::Nutrition).contains(&r.session.opener_id.as_str()));
        assert!(r.failure.is_none());
    }

    #[test]
    fn user_stop_token_ends_simulation() {
        let a = scripted(&["Hi!"]);
        let u = scripted(&["Bye [END_CHAT]"]);
        let ac = AgentConfig { role: Speaker::Assistant, persona_prompt: String::new(), bundle: Some(bundle()), portrait: None, gateway: &a };
        let uc = AgentConfig { role: Speaker::User, persona_prompt: String::new(), bundle: None, portrait: None, gateway: &u };
        let r = simulate_dialogue("sim", &ac, &uc, Scenario::Open, 10, 12, &clock()).unwrap();
        assert_eq!(r.session.turns.len(), 2);
        assert!(r.stopped_by_user);
    }

    #[test]
    fn transcript_roundtrip_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let run = |name: &str| {
            let a = scripted(&["Hi!", "Ok."]);
            let u = scripted(&["Hey.", "Sure."]);
            let ac = AgentConfig { role: Speaker::Assistant, persona_prompt: String::new(), bundle: Some(bundle()), portrait: None, gateway: &a };
            let uc = AgentConfig { role: Speaker::User, persona_prompt: String::new(), bundle: None, portrait: None, gateway: &u };
            let r = simulate_dialogue("sim", &ac, &uc, Scenario::RestSleep, 4, 23, &clock()).unwrap();
            let p = dir.path().join(name);
            write_transcript_jsonl(&p, &r).unwrap();
            std::fs::read(p).unwrap()
        };
        assert_eq!(run("a.jsonl"), run("b.jsonl"));
        let lines = read_transcript_jsonl(&dir.path().join("a.jsonl")).unwrap();
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn assistant_without_bundle_rejected() {
        let a = scripted(&["x"]);
        let ac = AgentConfig { role: Speaker::Assistant, persona_prompt: String::new(), bundle: None, portrait: None, gateway: &a };
        let uc = AgentConfig { role: Speaker::User, persona_prompt: String::new(), bundle: None, portrait: None, gateway: &a };
        assert!(simulate_dialogue("s", &ac, &uc, Scenario::Open, 2, 9, &clock()).is_err());
    }
}

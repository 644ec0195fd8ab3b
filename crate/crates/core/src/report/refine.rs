//! Self-refinement of the report format.
//!
//! Each iteration asks the model to critique the current best rendering, then
//! to propose a revised [`FormatSpec`] as JSON. The candidate is rendered and
//! scored; it replaces the best spec only if its perplexity is strictly lower.
//! The loop stops at `max_iters` or after two rejections in a row.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{measure, render, FormatSpec, ReportError};
use crate::cohort::{BehaviorField, IndicatorName, UserPortrait, WeeklyBundle};
use crate::gateway::{ChatMessage, Gateway, GenParams};
use crate::templates::TemplateId;

const MAX_CONSECUTIVE_REJECTIONS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineStep {
    pub iteration: usize,
    pub feedback_text: String,
    /// `None` when the revision could not be parsed into a valid spec.
    pub candidate_spec: Option<FormatSpec>,
    pub candidate_perplexity: Option<f64>,
    pub candidate_tokens: Option<usize>,
    pub accepted: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub spec: FormatSpec,
    pub initial_perplexity: f64,
    pub best_perplexity: f64,
    pub trace: Vec<RefineStep>,
}

fn allowed_columns() -> String {
    BehaviorField::ALL
        .iter()
        .map(|f| f.as_str())
        .chain(IndicatorName::ALL.iter().map(|n| n.as_str()))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Extracts the outermost `{...}` object from a reply that may carry prose or code fences.
fn extract_json_object(reply: &str) -> Option<&str> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    (end > start).then(|| &reply[start..=end])
}

fn parse_candidate(reply: &str) -> Result<FormatSpec, String> {
    let json = extract_json_object(reply).ok_or("reply contains no JSON object")?;
    let spec: FormatSpec = serde_json::from_str(json).map_err(|e| format!("invalid spec JSON: {e}"))?;
    spec.columns().map_err(|e| e.to_string())?;
    Ok(spec)
}

pub fn self_refine(
    bundle: &WeeklyBundle,
    portrait: &UserPortrait,
    initial: &FormatSpec,
    gateway: &Gateway,
    max_iters: usize,
) -> Result<RefineOutcome, ReportError> {
    let initial_text = render(bundle, portrait, initial)?;
    let initial_perplexity = measure(&initial_text, gateway)?.perplexity;
    let mut best = initial.clone();
    let mut best_text = initial_text;
    let mut best_perplexity = initial_perplexity;
    let mut trace = Vec::new();
    let mut rejections = 0;
    let params = GenParams::default();

    for iteration in 1..=max_iters {
        let spec_json = serde_json::to_string_pretty(&best)?;
        let feedback_prompt = TemplateId::FormatFeedback
            .render(&[("spec", &spec_json), ("report", &best_text)])
            .expect("template variables match");
        let feedback_text = gateway
            .chat(&[ChatMessage::user(feedback_prompt)], &params)?
            .text;
        let revision_prompt = TemplateId::FormatRevision
            .render(&[
                ("columns", &allowed_columns()),
                ("spec", &spec_json),
                ("feedback", &feedback_text),
            ])
            .expect("template variables match");
        let reply = gateway
            .chat(&[ChatMessage::user(revision_prompt)], &params)?
            .text;

        let mut step = RefineStep {
            iteration,
            feedback_text,
            candidate_spec: None,
            candidate_perplexity: None,
            candidate_tokens: None,
            accepted: false,
            error: None,
        };
        match parse_candidate(&reply) {
            Err(e) => step.error = Some(e),
            Ok(candidate) => {
                let text = render(bundle, portrait, &candidate)?;
                let m = measure(&text, gateway)?;
                step.candidate_perplexity = Some(m.perplexity);
                step.candidate_tokens = Some(m.token_count);
                if m.perplexity < best_perplexity {
                    step.accepted = true;
                    best = candidate.clone();
                    best_text = text;
                    best_perplexity = m.perplexity;
                }
                step.candidate_spec = Some(candidate);
            }
        }
        if step.accepted {
            rejections = 0;
        } else {
            rejections += 1;
        }
        log::debug!(
            "refine iteration {iteration}: accepted={} perplexity={:?}",
            step.accepted,
            step.candidate_perplexity
        );
        trace.push(step);
        if rejections >= MAX_CONSECUTIVE_REJECTIONS {
            break;
        }
    }

    Ok(RefineOutcome {
        spec: best,
        initial_perplexity,
        best_perplexity,
        trace,
    })
}

pub fn write_trace_jsonl(path: &Path, trace: &[RefineStep]) -> Result<(), ReportError> {
    crate::util::write_jsonl(path, trace)?;
    Ok(())
}

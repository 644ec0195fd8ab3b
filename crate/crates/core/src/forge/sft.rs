//! Instruction-tuning pairs: teacher distillation from seed corpora,
//! counterfactual augmentation and the final mix.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ForgeError;
use crate::analysis::parse_outcome;
use crate::cohort::{BehaviorField, IndicatorName, UserPortrait, WeeklyBundle};
use crate::gateway::{prompt_hash, ChatMessage, Gateway, GenParams};
use crate::report::{render, FormatSpec};
use crate::synth::{CfLabel, CounterfactualBundle};
use crate::templates::{TemplateId, TEMPLATE_VERSION};

pub const SINGLE_TURN_INSTRUCTION: &str =
    "Analyze the post and assess the mental state of its writer.";
pub const MULTI_TURN_INSTRUCTION: &str =
    "Continue the counseling conversation with the counselor's next reply.";
pub const BUNDLE_INSTRUCTION: &str =
    "Analyze the behavior data and the mental health record, then decide whether the person needs further support.";

pub const BEHAVIOR_SECTION: &str = "[Behavior data]";
pub const RECORD_SECTION: &str = "[Mental health record]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedTurn {
    pub role: String,
    pub text: String,
}

/// A seed example: a labeled post or a counseling case with its dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedRecord {
    Post {
        id: String,
        post_text: String,
        condition_label: String,
    },
    Counseling {
        id: String,
        report: String,
        turns: Vec<SeedTurn>,
    },
}

impl SeedRecord {
    pub fn id(&self) -> &str {
        match self {
            SeedRecord::Post { id, .. } | SeedRecord::Counseling { id, .. } => id,
        }
    }

    fn instruction_and_input(&self) -> (&'static str, String) {
        match self {
            SeedRecord::Post { post_text, .. } => (SINGLE_TURN_INSTRUCTION, post_text.clone()),
            SeedRecord::Counseling { report, turns, .. } => (
                MULTI_TURN_INSTRUCTION,
                format!("Case report:\n{report}\n\nConversation:\n{}", transcript(turns)),
            ),
        }
    }

    fn teacher_prompt(&self) -> String {
        match self {
            SeedRecord::Post {
                post_text,
                condition_label,
                ..
            } => TemplateId::SftSingleTurn.render(&[("condition", condition_label), ("post", post_text)]),
            SeedRecord::Counseling { report, turns, .. } => TemplateId::SftMultiTurn
                .render(&[("report", report), ("transcript", &transcript(turns))]),
        }
        .expect("template variables match")
    }
}

fn transcript(turns: &[SeedTurn]) -> String {
    turns
        .iter()
        .map(|t| format!("{}: {}", t.role, t.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn read_seeds(path: &Path) -> Result<Vec<SeedRecord>, ForgeError> {
    crate::util::read_jsonl(path).map_err(|e| ForgeError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed_id: String,
    pub teacher: String,
    pub prompt_hash: String,
    pub template_version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftPair {
    pub instruction: String,
    pub input: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cf_label: Option<CfLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clues: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl SftPair {
    /// `cf_label` and a non-empty `clues` list come together or not at all.
    pub fn check(&self) -> Result<(), String> {
        if self.instruction.trim().is_empty() {
            return Err("empty instruction".into());
        }
        if self.output.trim().is_empty() {
            return Err("empty output".into());
        }
        match (&self.cf_label, &self.clues) {
            (Some(_), Some(c)) if !c.is_empty() => Ok(()),
            (Some(_), _) => Err("cf_label without clues".into()),
            (None, Some(_)) => Err("clues without cf_label".into()),
            (None, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSeed {
    pub seed_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SftBuild {
    pub pairs: Vec<SftPair>,
    pub skipped: Vec<SkippedSeed>,
}

/// Distills one pair per seed from the teacher. Teacher failures skip the seed.
pub fn build_sft_pairs(
    seeds: &[SeedRecord],
    teacher: &Gateway,
    system_prompt: Option<&str>,
) -> Result<SftBuild, ForgeError> {
    let mut ids = HashSet::new();
    for s in seeds {
        if !ids.insert(s.id()) {
            return Err(ForgeError::DuplicateSeed(s.id().to_string()));
        }
    }
    let system = system_prompt.unwrap_or(TemplateId::SftOrcaSystem.text()).to_string();
    let teacher_id = teacher.backend_id();
    let params = GenParams::default();
    let results: Vec<Result<SftPair, SkippedSeed>> = seeds
        .par_iter()
        .map(|seed| {
            let messages = [ChatMessage::system(system.clone()), ChatMessage::user(seed.teacher_prompt())];
            let skip = |error: String| SkippedSeed {
                seed_id: seed.id().to_string(),
                error,
            };
            let reply = teacher.chat(&messages, &params).map_err(|e| skip(e.to_string()))?;
            if reply.text.trim().is_empty() {
                return Err(skip("teacher returned an empty reply".into()));
            }
            let (instruction, input) = seed.instruction_and_input();
            Ok(SftPair {
                instruction: instruction.into(),
                input,
                output: reply.text,
                cf_label: None,
                clues: None,
                provenance: Some(Provenance {
                    seed_id: seed.id().to_string(),
                    teacher: teacher_id.clone(),
                    prompt_hash: prompt_hash(&messages),
                    template_version: TEMPLATE_VERSION,
                }),
            })
        })
        .collect();
    let mut out = SftBuild::default();
    for r in results {
        match r {
            Ok(p) => out.pairs.push(p),
            Err(s) => {
                log::warn!("seed {} skipped: {}", s.seed_id, s.error);
                out.skipped.push(s)
            }
        }
    }
    Ok(out)
}

fn section_spec(base: &FormatSpec, columns: Vec<String>) -> FormatSpec {
    FormatSpec {
        column_order: columns,
        ..base.clone()
    }
}

/// Input text for a week: behavior data and mental record in separate sections.
pub fn bundle_input(
    bundle: &WeeklyBundle,
    portrait: &UserPortrait,
    spec: &FormatSpec,
) -> Result<String, ForgeError> {
    let behavior_cols = BehaviorField::ALL.iter().map(|f| f.as_str().to_string()).collect();
    let record_cols = IndicatorName::ALL.iter().map(|n| n.as_str().to_string()).collect();
    let behavior = render(bundle, portrait, &section_spec(spec, behavior_cols))?;
    let records = render(bundle, portrait, &section_spec(spec, record_cols))?;
    // The record half repeats the portrait and week heading; keep them once.
    let records: String = records.lines().skip(2).map(|l| format!("{l}\n")).collect();
    Ok(format!(
        "{BEHAVIOR_SECTION}\n{}{RECORD_SECTION}\n{}",
        behavior,
        records
    ))
}

/// The behavior section of an input (empty when the input has none).
pub fn behavior_section(input: &str) -> &str {
    let Some(start) = input.find(BEHAVIOR_SECTION) else {
        return "";
    };
    let end = input[start..]
        .find(RECORD_SECTION)
        .map(|i| start + i)
        .unwrap_or(input.len());
    &input[start..end]
}

pub fn behavior_hash(input: &str) -> String {
    crate::util::sha256_hex(behavior_section(input))
}

/// Replaces the record section of `input`; inputs without sections are all record.
fn replace_record(input: &str, new_record: &str) -> String {
    match input.find(RECORD_SECTION) {
        Some(i) => format!("{}{RECORD_SECTION}\n{}\n", &input[..i], new_record.trim_end()),
        None if input.contains(BEHAVIOR_SECTION) => {
            format!("{}\n{RECORD_SECTION}\n{}\n", input.trim_end(), new_record.trim_end())
        }
        None => new_record.trim().to_string(),
    }
}

fn record_part(input: &str) -> &str {
    match input.find(RECORD_SECTION) {
        Some(i) => input[i + RECORD_SECTION.len()..].trim_start_matches('\n'),
        None if input.contains(BEHAVIOR_SECTION) => "",
        None => input,
    }
}

/// Pair for a week whose analysis is already written.
pub fn bundle_pair(
    bundle: &WeeklyBundle,
    portrait: &UserPortrait,
    spec: &FormatSpec,
    output: &str,
) -> Result<SftPair, ForgeError> {
    Ok(SftPair {
        instruction: BUNDLE_INSTRUCTION.into(),
        input: bundle_input(bundle, portrait, spec)?,
        output: output.into(),
        cf_label: None,
        clues: None,
        provenance: None,
    })
}

/// Pair for a rule-based counterfactual week; the clues come from the injection.
pub fn counterfactual_bundle_pair(
    original: &SftPair,
    cf: &CounterfactualBundle,
    portrait: &UserPortrait,
    spec: &FormatSpec,
) -> Result<SftPair, ForgeError> {
    if cf.clues.is_empty() {
        return Err(ForgeError::CfRejected {
            reason: "injection changed no records".into(),
            response: String::new(),
        });
    }
    let rendered = bundle_input(&cf.bundle, portrait, spec)?;
    let input = replace_record(&original.input, record_part(&rendered));
    Ok(SftPair {
        instruction: original.instruction.clone(),
        input,
        output: original.output.clone(),
        cf_label: Some(cf.cf_label),
        clues: Some(cf.clues.clone()),
        provenance: original.provenance.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CfReply {
    pub record: String,
    pub clues: Vec<String>,
    pub analysis: String,
}

/// Splits a teacher reply into record, clues and analysis.
pub fn parse_cf_reply(reply: &str) -> Result<CfReply, String> {
    let find = |marker: &str| {
        reply
            .match_indices(marker)
            .find(|(i, _)| *i == 0 || reply.as_bytes()[i - 1] == b'\n')
            .map(|(i, _)| i)
    };
    let rec = find("Modified record:").ok_or("missing 'Modified record:' section")?;
    let clu = find("Clues:").ok_or("missing 'Clues:' section")?;
    let ana = find("Analysis:").ok_or("missing 'Analysis:' section")?;
    if !(rec < clu && clu < ana) {
        return Err("sections out of order".into());
    }
    let record = reply[rec + "Modified record:".len()..clu].trim().to_string();
    let clues: Vec<String> = reply[clu + "Clues:".len()..ana]
        .lines()
        .map(|l| l.trim().trim_start_matches(['-', '*']).trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let analysis = reply[ana + "Analysis:".len()..].trim().to_string();
    if record.is_empty() {
        return Err("empty modified record".into());
    }
    if clues.is_empty() {
        return Err("no clues given".into());
    }
    if analysis.is_empty() {
        return Err("empty analysis".into());
    }
    Ok(CfReply {
        record,
        clues,
        analysis,
    })
}

/// Builds a counterfactual sibling of `pair` with the teacher. The original is
/// not modified and the behavior section is carried over byte for byte.
pub fn augment_counterfactual(
    pair: &SftPair,
    label: CfLabel,
    teacher: &Gateway,
) -> Result<SftPair, ForgeError> {
    if pair.cf_label.is_some() {
        return Err(ForgeError::AlreadyAugmented);
    }
    let record = record_part(&pair.input);
    let prompt = TemplateId::Counterfactual
        .render(&[("label", label.phrase()), ("record", record), ("output", &pair.output)])
        .expect("template variables match");
    let messages = [ChatMessage::user(prompt)];
    let reply = teacher.chat(&messages, &GenParams::default())?.text;
    let parsed = parse_cf_reply(&reply).map_err(|reason| ForgeError::CfRejected {
        reason,
        response: reply.clone(),
    })?;

    let mut output = parsed.analysis;
    if let Ok(expected) = parse_outcome(&pair.output) {
        match parse_outcome(&output) {
            Ok(got) if got != expected => {
                return Err(ForgeError::CfRejected {
                    reason: format!("outcome changed from {} to {}", expected.as_u8(), got.as_u8()),
                    response: reply,
                })
            }
            Ok(_) => {}
            Err(_) => output = format!("{}\nOutcome: {}", output.trim_end(), expected.as_u8()),
        }
    }
    let input = replace_record(&pair.input, &parsed.record);
    debug_assert_eq!(behavior_hash(&input), behavior_hash(&pair.input));
    Ok(SftPair {
        instruction: pair.instruction.clone(),
        input,
        output,
        cf_label: Some(label),
        clues: Some(parsed.clues),
        provenance: Some(Provenance {
            seed_id: pair
                .provenance
                .as_ref()
                .map(|p| p.seed_id.clone())
                .unwrap_or_default(),
            teacher: teacher.backend_id(),
            prompt_hash: prompt_hash(&messages),
            template_version: TEMPLATE_VERSION,
        }),
    })
}

/// Which originals get a counterfactual sibling: one per two originals,
/// labels rotating evenly over the three reasons.
pub fn plan_counterfactuals(n_original: usize, seed: u64) -> Vec<(usize, CfLabel)> {
    let mut idx: Vec<usize> = (0..n_original).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut picked: Vec<usize> = idx.into_iter().take(n_original / 2).collect();
    picked.sort_unstable();
    picked
        .into_iter()
        .enumerate()
        .map(|(k, i)| (i, CfLabel::ALL[k % CfLabel::ALL.len()]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfRejection {
    pub index: usize,
    pub cf_label: CfLabel,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CfBuild {
    pub pairs: Vec<SftPair>,
    pub rejected: Vec<CfRejection>,
}

pub fn augment_all(originals: &[SftPair], teacher: &Gateway, seed: u64) -> CfBuild {
    let plan = plan_counterfactuals(originals.len(), seed);
    let results: Vec<_> = plan
        .par_iter()
        .map(|&(i, label)| (i, label, augment_counterfactual(&originals[i], label, teacher)))
        .collect();
    let mut out = CfBuild::default();
    for (index, cf_label, r) in results {
        match r {
            Ok(p) => out.pairs.push(p),
            Err(e) => out.rejected.push(CfRejection {
                index,
                cf_label,
                reason: e.to_string(),
            }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixReport {
    pub total: usize,
    /// Pair counts keyed by counterfactual label, `none` for originals.
    pub counts: BTreeMap<String, usize>,
}

/// Shuffles originals and counterfactuals together and writes them as JSONL.
pub fn mix_sft(
    original: &[SftPair],
    counterfactual: &[SftPair],
    seed: u64,
    path: &Path,
) -> Result<MixReport, ForgeError> {
    let mut all: Vec<&SftPair> = original.iter().chain(counterfactual).collect();
    for p in &all {
        p.check().map_err(ForgeError::InvalidPair)?;
    }
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut counts = BTreeMap::new();
    for p in &all {
        let key = p.cf_label.map(|l| l.as_str()).unwrap_or("none");
        *counts.entry(key.to_string()).or_insert(0) += 1;
    }
    crate::util::write_jsonl(path, &all).map_err(|e| ForgeError::io(path, e))?;
    Ok(MixReport {
        total: all.len(),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub line: usize,
    pub message: String,
}

/// Checks every line of an SFT JSONL file against the pair schema.
pub fn validate_sft_jsonl(path: &Path) -> Result<Vec<Violation>, ForgeError> {
    let text = std::fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let res = serde_json::from_str::<SftPair>(line)
            .map_err(|e| e.to_string())
            .and_then(|p| p.check());
        if let Err(message) = res {
            out.push(Violation { line: n + 1, message });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{FnBackend, MockBackend, MockRule};
    use crate::synth::{generate, inject_counterfactual, SynthConfig};

    fn post(id: &str) -> SeedRecord {
        SeedRecord::Post {
            id: id.into(),
            post_text: format!("post {id}: I can't sleep and feel hopeless"),
            condition_label: "depression".into(),
        }
    }

    #[test]
    fn seed_schemas_parse() {
        let p: SeedRecord =
            serde_json::from_str(r#"{"id":"a","post_text":"t","condition_label":"c"}"#).unwrap();
        assert_eq!(p.id(), "a");
        let c: SeedRecord = serde_json::from_str(
            r#"{"id":"b","report":"r","turns":[{"role":"client","text":"hi"}]}"#,
        )
        .unwrap();
        assert!(matches!(c, SeedRecord::Counseling { .. }));
    }

    #[test]
    fn teacher_pairs_carry_provenance_and_skip_failures() {
        let teacher = Gateway::new(FnBackend::chat("teacher", |p| {
            if p.contains("post s2") {
                String::new()
            } else {
                "Step 1: the post mentions insomnia.".into()
            }
        }));
        let seeds = vec![post("s1"), post("s2"), SeedRecord::Counseling {
            id: "c1".into(),
            report: "Client reports stress at work.".into(),
            turns: vec![
                SeedTurn { role: "client".into(), text: "I feel tense.".into() },
                SeedTurn { role: "counselor".into(), text: "Tell me more.".into() },
            ],
        }];
        let out = build_sft_pairs(&seeds, &teacher, None).unwrap();
        assert_eq!(out.pairs.len(), 2);
        assert_eq!(out.skipped[0].seed_id, "s2");
        let multi = &out.pairs[1];
        assert!(multi.input.contains("client: I feel tense.\ncounselor: Tell me more."));
        let prov = multi.provenance.as_ref().unwrap();
        assert_eq!(prov.teacher, "teacher");
        assert_eq!(prov.prompt_hash.len(), 64);
    }

    #[test]
    fn duplicate_seed_ids_rejected() {
        let teacher = Gateway::new(FnBackend::chat("t", |_| "x".into()));
        let err = build_sft_pairs(&[post("a"), post("a")], &teacher, None).unwrap_err();
        assert!(matches!(err, ForgeError::DuplicateSeed(id) if id == "a"));
    }

    fn week_pair() -> (SftPair, WeeklyBundle) {
        let cohort = generate(&SynthConfig {
            n_participants: 1,
            weeks_per_participant: 1,
            ..SynthConfig::default()
        })
        .unwrap();
        let b = cohort.bundles[0].clone();
        let pair = bundle_pair(&b, &UserPortrait::anonymous("s001"), &FormatSpec::default(), "Fine.\nOutcome: 1").unwrap();
        (pair, b)
    }

    const CF_REPLY: &str = "Modified record:\nmood 3, stress 3\nClues:\n- mood raised to neutral to avoid judgment\nAnalysis:\nSleep is short and steps are low.";

    #[test]
    fn augmentation_keeps_behavior_and_outcome() {
        let (pair, _) = week_pair();
        let teacher = Gateway::new(MockBackend::new(vec![MockRule::reply("*", CF_REPLY)]).unwrap());
        let before = pair.clone();
        let cf = augment_counterfactual(&pair, CfLabel::Stigma, &teacher).unwrap();
        assert_eq!(pair, before);
        assert_eq!(behavior_hash(&cf.input), behavior_hash(&pair.input));
        assert!(!behavior_section(&cf.input).is_empty());
        assert!(cf.input.ends_with("[Mental health record]\nmood 3, stress 3\n"));
        assert!(cf.output.ends_with("Outcome: 1"));
        cf.check().unwrap();
        assert!(matches!(
            augment_counterfactual(&cf, CfLabel::Stigma, &teacher),
            Err(ForgeError::AlreadyAugmented)
        ));
    }

    #[test]
    fn missing_clues_rejected() {
        let (pair, _) = week_pair();
        let teacher = Gateway::new(
            MockBackend::new(vec![MockRule::reply("*", "Modified record:\nfine\nAnalysis:\nok")]).unwrap(),
        );
        let err = augment_counterfactual(&pair, CfLabel::Stigma, &teacher).unwrap_err();
        assert!(matches!(err, ForgeError::CfRejected { reason, .. } if reason.contains("Clues")));
    }

    #[test]
    fn flipped_outcome_rejected() {
        let (pair, _) = week_pair();
        let reply = format!("{CF_REPLY}\nOutcome: 0");
        let teacher = Gateway::new(MockBackend::new(vec![MockRule::reply("*", reply)]).unwrap());
        assert!(augment_counterfactual(&pair, CfLabel::Stigma, &teacher).is_err());
    }

    #[test]
    fn rule_based_counterfactual_pair() {
        let (pair, b) = week_pair();
        let cf = inject_counterfactual(&b, CfLabel::PersonalityTraits).unwrap();
        if cf.clues.is_empty() {
            return;
        }
        let p = counterfactual_bundle_pair(&pair, &cf, &UserPortrait::anonymous("s001"), &FormatSpec::default())
            .unwrap();
        assert_eq!(behavior_hash(&p.input), behavior_hash(&pair.input));
        p.check().unwrap();
    }

    #[test]
    fn plan_ratio_and_label_balance() {
        let plan = plan_counterfactuals(90, 1);
        assert_eq!(plan.len(), 45);
        for l in CfLabel::ALL {
            assert_eq!(plan.iter().filter(|(_, x)| *x == l).count(), 15);
        }
        assert_eq!(plan, plan_counterfactuals(90, 1));
    }

    #[test]
    fn mix_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sft.jsonl");
        let base = SftPair {
            instruction: "i".into(),
            input: "x".into(),
            output: "o".into(),
            cf_label: None,
            clues: None,
            provenance: None,
        };
        let cf = SftPair {
            cf_label: Some(CfLabel::Stigma),
            clues: Some(vec!["c".into()]),
            ..base.clone()
        };
        let r = mix_sft(&[base.clone(), base.clone()], &[cf], 5, &path).unwrap();
        assert_eq!(r.total, 3);
        assert_eq!(r.counts["none"], 2);
        assert_eq!(r.counts["stigma"], 1);
        assert!(validate_sft_jsonl(&path).unwrap().is_empty());

        std::fs::write(&path, "{\"instruction\":\"i\",\"input\":\"\",\"output\":\"o\",\"cf_label\":\"stigma\"}\n").unwrap();
        let v = validate_sft_jsonl(&path).unwrap();
        assert_eq!(v[0].message, "cf_label without clues");
    }
}

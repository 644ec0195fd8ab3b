//! `mhfa` subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveTime, TimeZone, Utc, Weekday};
use clap::{Parser, Subcommand, ValueEnum};
use mhfa_core::analysis::{
    generate_analysis, simulate_dialogue, write_transcript_jsonl, AgentConfig, AnalysisError, AnalysisReport,
    DialogueSession, Speaker, StepClock,
};
use mhfa_core::cohort::{
    aggregate_weekly, assign_labels, parse_globem, parse_globem_with, parse_pmdata, parse_pmdata_with,
    read_bundles_jsonl, read_overrides, write_bundles_jsonl, Cohort, DatasetSchema, LabelRule, UserPortrait,
    WeeklyBundle,
};
use mhfa_core::eval::{
    behavior_recall, classification_metrics, consistency_eval, join_predictions, read_outcomes, tone_adaptation_eval,
    tone_points, write_json, write_recall_csv, write_tone_curve_csv, IdOutcome, Lexicon, MatcherTable, SentimentScorer,
};
use mhfa_core::forge::{
    augment_all, build_manifest, build_sft_pairs, clean_docs, filter_by_keywords, load_general_docs, mix_sft,
    read_seeds, validate_sft_jsonl, KeywordTable, MixRatio, SftPair,
};
use mhfa_core::gateway::{open_gateway, BackendSpec, EnvSettings};
use mhfa_core::report::{self, FormatSpec};
use mhfa_core::synth::{generate, SynthConfig};
use mhfa_core::templates::Scenario;
use mhfa_core::util::{read_jsonl, write_json_pretty, write_jsonl};
use mhfa_core::Gateway;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::ServiceConfig;
use crate::{plots, ServiceError};

#[derive(Debug, Parser)]
#[command(name = "mhfa", version, about = "Wearable and mental-record analysis workbench")]
pub struct Cli {
    /// Model backend: `mock:<script.yaml>`, `replay:<log.jsonl>` or an http(s) URL.
    /// Falls back to MHFA_MOCK_SCRIPT / MHFA_BASE_URL.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Dataset {
    Pmdata,
    Globem,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a raw cohort folder into labeled weekly bundles.
    Ingest {
        #[arg(long, value_enum)]
        kind: Dataset,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        label_rule: Option<PathBuf>,
        #[arg(long)]
        overrides: Option<PathBuf>,
    },
    /// Generate a synthetic cohort with hidden ground truth.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        weeks: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-refine the report format against the backend's perplexity.
    RefineFormat {
        #[arg(long)]
        bundles: PathBuf,
        #[arg(long)]
        participant: Option<String>,
        #[arg(long)]
        week: Option<u32>,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        max_iters: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Build the pre-training corpus manifest.
    ForgePt {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        general: PathBuf,
        #[arg(long, default_value = "2:1")]
        ratio: String,
        #[arg(long, default_value_t = 3)]
        min_hits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Clean matched documents with the backend first.
        #[arg(long)]
        clean: bool,
        #[arg(long)]
        keywords: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distill instruction pairs from seed files with a teacher backend.
    ForgeSft {
        #[arg(long = "seeds", required = true)]
        seeds: Vec<PathBuf>,
        #[arg(long)]
        system_prompt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add counterfactual siblings to an SFT set and write the mix.
    AugmentCf {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Five-phase analysis of every bundle.
    Analyze {
        #[arg(long)]
        bundles: PathBuf,
        #[arg(long)]
        portraits: Option<PathBuf>,
        #[arg(long)]
        format: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulated assistant/user conversations over bundles.
    Simulate {
        #[arg(long)]
        bundles: PathBuf,
        #[arg(long)]
        participant: Option<String>,
        #[arg(long, default_value = "mental_health")]
        scenario: String,
        #[arg(long, default_value_t = 8)]
        max_turns: usize,
        #[arg(long, default_value_t = 20)]
        hour: u32,
        #[arg(long)]
        persona: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics, tone curve, consistency and recall files.
    Evaluate {
        #[arg(long, requires = "labels")]
        preds: Option<PathBuf>,
        #[arg(long, requires = "preds")]
        labels: Option<PathBuf>,
        /// `sessions.jsonl` from `simulate`.
        #[arg(long)]
        sessions: Option<PathBuf>,
        /// `reports.jsonl` from `analyze`.
        #[arg(long)]
        reports: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Score sentiment with the backend instead of the shipped lexicon.
        #[arg(long)]
        backend_sentiment: bool,
        #[arg(long)]
        emit_plots: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        store: Option<PathBuf>,
    },
}

fn gateway(backend: &Option<String>) -> Result<Gateway, ServiceError> {
    let env = EnvSettings::from_env();
    let spec: BackendSpec = match backend {
        Some(b) => b.parse()?,
        None => env
            .backend_spec()
            .ok_or_else(|| ServiceError::Config("no backend: pass --backend or set MHFA_MOCK_SCRIPT/MHFA_BASE_URL".into()))?,
    };
    Ok(open_gateway(&spec, &env)?)
}

fn mkdir(dir: &Path) -> Result<(), ServiceError> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn portraits_of(cohort: &Cohort) -> Vec<UserPortrait> {
    cohort.participants.iter().map(|p| p.portrait.clone()).collect()
}

fn read_portraits(path: Option<&Path>) -> Result<BTreeMap<String, UserPortrait>, ServiceError> {
    let list: Vec<UserPortrait> = match path {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    Ok(list.into_iter().map(|p| (p.participant_id.clone(), p)).collect())
}

fn portrait_for(map: &BTreeMap<String, UserPortrait>, id: &str) -> UserPortrait {
    map.get(id).cloned().unwrap_or_else(|| UserPortrait::anonymous(id))
}

pub fn bundle_id(b: &WeeklyBundle) -> String {
    format!("{}#{}", b.participant_id, b.week_index)
}

/// One line of `reports.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportLine {
    pub id: String,
    pub report: AnalysisReport,
}

/// One line of `sessions.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionLine {
    pub bundle: WeeklyBundle,
    pub session: DialogueSession,
    pub stopped_by_user: bool,
    pub failure: Option<String>,
}

/// Runs one subcommand and returns its stdout summary.
pub fn run(cli: Cli) -> Result<Value, ServiceError> {
    let backend = cli.backend;
    match cli.command {
        Command::Ingest {
            kind,
            input,
            out,
            schema,
            label_rule,
            overrides,
        } => {
            let cohort = match (kind, &schema) {
                (Dataset::Pmdata, None) => parse_pmdata(&input)?,
                (Dataset::Globem, None) => parse_globem(&input)?,
                (Dataset::Pmdata, Some(s)) => parse_pmdata_with(&input, &DatasetSchema::from_path(s)?)?,
                (Dataset::Globem, Some(s)) => parse_globem_with(&input, &DatasetSchema::from_path(s)?)?,
            };
            let rule = match &label_rule {
                Some(p) => LabelRule::from_path(p)?,
                None => LabelRule::default(),
            };
            let overrides = match &overrides {
                Some(p) => read_overrides(p)?,
                None => Vec::new(),
            };
            let bundles = assign_labels(&aggregate_weekly(&cohort, Weekday::Mon), &rule, &overrides)?;
            mkdir(&out)?;
            write_bundles_jsonl(&out.join("bundles.jsonl"), &bundles)?;
            write_jsonl(&out.join("portraits.jsonl"), &portraits_of(&cohort))?;
            write_json_pretty(&out.join("ingest_report.json"), &cohort.report)?;
            write_jsonl(&out.join("labels.jsonl"), &labels_of(&bundles))?;
            Ok(json!({
                "participants": cohort.participants.len(),
                "bundles": bundles.len(),
                "rejected_rows": cohort.report.rejected_rows.len(),
                "file_errors": cohort.report.file_errors.len(),
            }))
        }
        Command::Synth { seed, n, weeks, out } => {
            let cfg = SynthConfig {
                seed,
                n_participants: n,
                weeks_per_participant: weeks,
                ..SynthConfig::default()
            };
            let s = generate(&cfg)?;
            mkdir(&out)?;
            write_bundles_jsonl(&out.join("bundles.jsonl"), &s.bundles)?;
            write_jsonl(&out.join("portraits.jsonl"), &portraits_of(&s.cohort))?;
            s.write_truth_csv(&out.join("truth.csv"))?;
            write_jsonl(&out.join("clamps.jsonl"), &s.clamps)?;
            write_jsonl(&out.join("labels.jsonl"), &labels_of(&s.bundles))?;
            Ok(json!({"bundles": s.bundles.len(), "positive_fraction": s.positive_fraction(), "clamps": s.clamps.len()}))
        }
        Command::RefineFormat {
            bundles,
            participant,
            week,
            init,
            max_iters,
            out,
            trace,
        } => {
            let gw = gateway(&backend)?;
            let all = read_bundles_jsonl(&bundles)?;
            let bundle = all
                .iter()
                .find(|b| participant.as_ref().is_none_or(|p| &b.participant_id == p) && week.is_none_or(|w| b.week_index == w))
                .ok_or_else(|| ServiceError::Input("no bundle matches --participant/--week".into()))?;
            let initial = match &init {
                Some(p) => FormatSpec::from_path(p)?,
                None => FormatSpec::default(),
            };
            let portrait = UserPortrait::anonymous(bundle.participant_id.clone());
            let outcome = report::self_refine(bundle, &portrait, &initial, &gw, max_iters)?;
            outcome.spec.write(&out)?;
            let trace_path = trace.unwrap_or_else(|| out.with_extension("trace.jsonl"));
            report::write_trace_jsonl(&trace_path, &outcome.trace)?;
            Ok(json!({
                "initial_perplexity": outcome.initial_perplexity,
                "best_perplexity": outcome.best_perplexity,
                "iterations": outcome.trace.len(),
                "accepted": outcome.trace.iter().filter(|s| s.accepted).count(),
            }))
        }
        Command::ForgePt {
            domain,
            general,
            ratio,
            min_hits,
            seed,
            clean,
            keywords,
            out,
        } => {
            let ratio: MixRatio = ratio.parse()?;
            let table = match &keywords {
                Some(p) => KeywordTable::from_path(p)?,
                None => KeywordTable::reference(),
            };
            let filtered = filter_by_keywords(&domain, &table, min_hits)?;
            let (general_docs, general_errors) = load_general_docs(&general)?;
            let mut domain_docs = filtered.matched.clone();
            mkdir(&out)?;
            let mut flagged = Vec::new();
            if clean {
                let gw = gateway(&backend)?;
                let cleaned = clean_docs(&domain_docs, &gw);
                let dir = out.join("cleaned");
                mkdir(&dir)?;
                domain_docs = Vec::with_capacity(cleaned.len());
                for c in cleaned {
                    if let Some(f) = &c.flag {
                        flagged.push(json!({"doc_id": c.doc.doc_id, "flag": f}));
                    }
                    std::fs::write(dir.join(format!("{}.txt", c.doc.doc_id)), &c.doc.text)?;
                    domain_docs.push(c.doc);
                }
            }
            let manifest = build_manifest(&domain_docs, &general_docs, ratio, seed)?;
            manifest.write(&out.join("manifest.json"))?;
            let unmatched: Vec<String> = filtered.unmatched.iter().map(|p| p.display().to_string()).collect();
            std::fs::write(out.join("unmatched.txt"), unmatched.join("\n"))?;
            let mut errors: Vec<Value> = filtered
                .errors
                .iter()
                .chain(&general_errors)
                .map(|e| json!({"path": e.path, "message": e.message}))
                .collect();
            errors.extend(flagged.iter().cloned());
            write_jsonl(&out.join("problems.jsonl"), &errors)?;
            Ok(json!({
                "domain_docs": manifest.docs.iter().filter(|d| d.side == mhfa_core::forge::Side::Domain).count(),
                "general_docs": manifest.docs.iter().filter(|d| d.side == mhfa_core::forge::Side::General).count(),
                "domain_tokens": manifest.domain_tokens,
                "general_tokens": manifest.general_tokens,
                "mix_ratio": manifest.mix_ratio,
                "unmatched": unmatched.len(),
                "flagged": flagged.len(),
            }))
        }
        Command::ForgeSft {
            seeds,
            system_prompt,
            out,
        } => {
            let gw = gateway(&backend)?;
            let mut all = Vec::new();
            for p in &seeds {
                all.extend(read_seeds(p)?);
            }
            let system = match &system_prompt {
                Some(p) => Some(std::fs::read_to_string(p)?),
                None => None,
            };
            let build = build_sft_pairs(&all, &gw, system.as_deref())?;
            if let Some(parent) = out.parent() {
                mkdir(parent)?;
            }
            write_jsonl(&out, &build.pairs)?;
            write_jsonl(&out.with_extension("skipped.jsonl"), &build.skipped)?;
            Ok(json!({"pairs": build.pairs.len(), "skipped": build.skipped.len()}))
        }
        Command::AugmentCf { input, seed, out } => {
            let gw = gateway(&backend)?;
            let originals: Vec<SftPair> = read_jsonl(&input)?;
            let cf = augment_all(&originals, &gw, seed);
            mkdir(&out)?;
            write_jsonl(&out.join("sft_cf.jsonl"), &cf.pairs)?;
            write_jsonl(&out.join("rejected.jsonl"), &cf.rejected)?;
            let mixed = out.join("sft_mixed.jsonl");
            let report = mix_sft(&originals, &cf.pairs, seed, &mixed)?;
            let violations = validate_sft_jsonl(&mixed)?;
            if !violations.is_empty() {
                return Err(ServiceError::Input(format!(
                    "mixed set has {} schema violations, first at line {}: {}",
                    violations.len(),
                    violations[0].line,
                    violations[0].message
                )));
            }
            write_json_pretty(&out.join("mix_report.json"), &report)?;
            Ok(json!({"counterfactual": cf.pairs.len(), "rejected": cf.rejected.len(), "total": report.total, "counts": report.counts}))
        }
        Command::Analyze {
            bundles,
            portraits,
            format,
            out,
        } => {
            let gw = gateway(&backend)?;
            let all = read_bundles_jsonl(&bundles)?;
            let portraits = read_portraits(portraits.as_deref())?;
            let spec = match &format {
                Some(p) => FormatSpec::from_path(p)?,
                None => FormatSpec::default(),
            };
            let mut reports = Vec::new();
            let mut preds = Vec::new();
            let mut failures = Vec::new();
            for b in &all {
                let portrait = portrait_for(&portraits, &b.participant_id);
                match generate_analysis(b, &portrait, &spec, &gw) {
                    Ok(r) => {
                        preds.push(IdOutcome {
                            id: bundle_id(b),
                            outcome: r.outcome.as_u8(),
                        });
                        reports.push(ReportLine { id: bundle_id(b), report: r });
                    }
                    Err(e @ (AnalysisError::Unparseable { .. } | AnalysisError::NoRecords(_))) => {
                        // counted as a negative prediction, listed for review
                        if matches!(e, AnalysisError::Unparseable { .. }) {
                            preds.push(IdOutcome { id: bundle_id(b), outcome: 0 });
                        }
                        failures.push(json!({"id": bundle_id(b), "error": e.to_string()}));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            mkdir(&out)?;
            write_jsonl(&out.join("reports.jsonl"), &reports)?;
            write_jsonl(&out.join("predictions.jsonl"), &preds)?;
            write_jsonl(&out.join("failures.jsonl"), &failures)?;
            write_jsonl(&out.join("labels.jsonl"), &labels_of(&all))?;
            Ok(json!({"analyzed": reports.len(), "failures": failures.len()}))
        }
        Command::Simulate {
            bundles,
            participant,
            scenario,
            max_turns,
            hour,
            persona,
            out,
        } => {
            let gw = gateway(&backend)?;
            let scenario: Scenario = scenario
                .parse()
                .map_err(|e: mhfa_core::templates::TemplateError| ServiceError::Input(e.to_string()))?;
            if hour > 23 {
                return Err(ServiceError::Input("--hour must be 0-23".into()));
            }
            let persona = persona.unwrap_or_else(|| {
                "A participant in a wellbeing study who answers briefly and honestly about their week.".into()
            });
            let all = read_bundles_jsonl(&bundles)?;
            mkdir(&out.join("transcripts"))?;
            let mut lines = Vec::new();
            for b in all.iter().filter(|b| participant.as_ref().is_none_or(|p| &b.participant_id == p)) {
                let assistant = AgentConfig {
                    role: Speaker::Assistant,
                    persona_prompt: String::new(),
                    bundle: Some(b.clone()),
                    portrait: None,
                    gateway: &gw,
                };
                let user = AgentConfig {
                    role: Speaker::User,
                    persona_prompt: persona.clone(),
                    bundle: Some(b.clone()),
                    portrait: None,
                    gateway: &gw,
                };
                let start = Utc.from_utc_datetime(&b.week_end().and_time(NaiveTime::from_hms_opt(hour, 0, 0).expect("hour checked")));
                let clock = StepClock::new(start, Duration::seconds(30));
                let id = format!("{}_w{}", b.participant_id, b.week_index);
                let result = simulate_dialogue(&id, &assistant, &user, scenario, max_turns, hour, &clock)?;
                write_transcript_jsonl(&out.join("transcripts").join(format!("{id}.jsonl")), &result)?;
                lines.push(SessionLine {
                    bundle: b.clone(),
                    session: result.session,
                    stopped_by_user: result.stopped_by_user,
                    failure: result.failure,
                });
            }
            write_jsonl(&out.join("sessions.jsonl"), &lines)?;
            Ok(json!({"sessions": lines.len(), "failed": lines.iter().filter(|l| l.failure.is_some()).count()}))
        }
        Command::Evaluate {
            preds,
            labels,
            sessions,
            reports,
            k,
            backend_sentiment,
            emit_plots,
            out,
        } => evaluate(&backend, preds, labels, sessions, reports, k, backend_sentiment, emit_plots, &out),
        Command::Serve { .. } => Err(ServiceError::Input("serve is run by the binary entry point".into())),
    }
}

fn labels_of(bundles: &[WeeklyBundle]) -> Vec<IdOutcome> {
    bundles
        .iter()
        .filter_map(|b| {
            b.label.map(|l| IdOutcome {
                id: bundle_id(b),
                outcome: l.as_u8(),
            })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    backend: &Option<String>,
    preds: Option<PathBuf>,
    labels: Option<PathBuf>,
    sessions: Option<PathBuf>,
    reports: Option<PathBuf>,
    k: usize,
    backend_sentiment: bool,
    emit_plots: bool,
    out: &Path,
) -> Result<Value, ServiceError> {
    mkdir(out)?;
    let mut summary = serde_json::Map::new();
    if let (Some(p), Some(l)) = (&preds, &labels) {
        let (p, l) = join_predictions(&read_outcomes(p)?, &read_outcomes(l)?)?;
        let m = classification_metrics(&p, &l)?;
        write_json(&out.join("metrics.json"), &m)?;
        summary.insert("metrics".into(), serde_json::to_value(m)?);
    }
    if let Some(path) = &sessions {
        let lines: Vec<SessionLine> = read_jsonl(path)?;
        let lexicon = Lexicon::shipped();
        let gw = if backend_sentiment { Some(gateway(backend)?) } else { None };
        let scorer = match &gw {
            Some(g) => SentimentScorer::Backend(g),
            None => SentimentScorer::Lexicon(&lexicon),
        };
        let sess: Vec<DialogueSession> = lines.iter().map(|l| l.session.clone()).collect();
        let tone = tone_adaptation_eval(&tone_points(&sess, scorer)?);
        write_tone_curve_csv(&out.join("tone_curve.csv"), &tone.curve)?;
        write_json(&out.join("tone.json"), &json!({"r_low": tone.r_low, "r_high": tone.r_high, "points": tone.curve.len()}))?;
        summary.insert("r_low".into(), serde_json::to_value(tone.r_low)?);
        summary.insert("r_high".into(), serde_json::to_value(tone.r_high)?);

        let table = MatcherTable::shipped();
        let rows: Vec<(String, _)> = lines
            .iter()
            .map(|l| {
                let transcript: String = l
                    .session
                    .turns
                    .iter()
                    .filter(|t| t.role == Speaker::Assistant)
                    .map(|t| t.text.as_str())
                    .collect::<Vec<_>>()
                    .join("\n");
                (l.session.session_id.clone(), behavior_recall(&transcript, &l.bundle, l.session.scenario, &table))
            })
            .collect();
        write_recall_csv(&out.join("recall.csv"), &rows)?;
        summary.insert("recall_rows".into(), json!(rows.len()));
    }
    if let Some(path) = &reports {
        let gw = gateway(backend)?;
        let lines: Vec<ReportLine> = read_jsonl(path)?;
        let reports: Vec<AnalysisReport> = lines.into_iter().map(|l| l.report).collect();
        let c = consistency_eval(&reports, &gw, k)?;
        write_json(&out.join("consistency.json"), &c)?;
        summary.insert("consistency".into(), serde_json::to_value(c)?);
    }
    if summary.is_empty() {
        return Err(ServiceError::Input("nothing to evaluate: pass --preds/--labels, --sessions or --reports".into()));
    }
    if emit_plots {
        let written = emit_plots_from_csv(out)?;
        summary.insert("plots".into(), json!(written));
    }
    Ok(Value::Object(summary))
}

/// Renders SVG charts from whichever plot-ready CSVs exist in `dir`.
pub fn emit_plots_from_csv(dir: &Path) -> Result<Vec<String>, ServiceError> {
    let mut written = Vec::new();
    let tone = dir.join("tone_curve.csv");
    if tone.exists() {
        let mut points = Vec::new();
        for rec in csv::Reader::from_path(&tone).map_err(csv_err)?.deserialize() {
            let p: mhfa_core::eval::ToneCurvePoint = rec.map_err(csv_err)?;
            points.push((p.mood, p.sentiment));
        }
        let svg = plots::scatter("Assistant sentiment by mood", "mood", "sentiment", &points, (1.0, 5.0), (0.0, 5.0));
        std::fs::write(dir.join("tone_curve.svg"), svg)?;
        written.push("tone_curve.svg".to_string());
    }
    let recall = dir.join("recall.csv");
    if recall.exists() {
        let mut by_scenario: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for rec in csv::Reader::from_path(&recall).map_err(csv_err)?.deserialize() {
            let row: BTreeMap<String, String> = rec.map_err(csv_err)?;
            if let Ok(v) = row["recall"].parse::<f64>() {
                let e = by_scenario.entry(row["scenario"].clone()).or_default();
                e.0 += v;
                e.1 += 1;
            }
        }
        let items: Vec<(String, f64)> = by_scenario.into_iter().map(|(s, (sum, n))| (s, sum / n as f64)).collect();
        std::fs::write(dir.join("recall.svg"), plots::bars("Indicator recall by scenario", "recall", &items))?;
        written.push("recall.svg".to_string());
    }
    Ok(written)
}

fn csv_err(e: csv::Error) -> ServiceError {
    ServiceError::Input(format!("csv: {e}"))
}

/// Settings for `serve`: config file, then command-line overrides.
pub fn serve_config(
    config: Option<&Path>,
    host: Option<String>,
    port: Option<u16>,
    store: Option<PathBuf>,
    backend: Option<String>,
) -> Result<ServiceConfig, ServiceError> {
    let mut c = match config {
        Some(p) => ServiceConfig::from_path(p)?,
        None => ServiceConfig::default(),
    };
    if let Some(h) = host {
        c.host = h;
    }
    if let Some(p) = port {
        c.port = p;
    }
    if let Some(s) = store {
        c.store_path = s;
    }
    if backend.is_some() {
        c.backend = backend;
    }
    Ok(c)
}

/// Gateway for `serve`, using the config's backend and credentials.
pub fn serve_gateway(c: &ServiceConfig) -> Result<Gateway, ServiceError> {
    let mut env = EnvSettings::from_env();
    if c.model.is_some() {
        env.model = c.model.clone();
    }
    if c.backend_token.is_some() {
        env.api_key = c.backend_token.clone();
    }
    let spec = match &c.backend {
        Some(b) => b.parse()?,
        None => env
            .backend_spec()
            .ok_or_else(|| ServiceError::Config("no backend configured".into()))?,
    };
    Ok(open_gateway(&spec, &env)?)
}

//! Rendering weekly bundles into the compact text table the model reads, and
//! the self-refinement loop that searches for a lower-perplexity format.

mod refine;

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{BehaviorField, IndicatorName, UserPortrait, WeeklyBundle};
use crate::gateway::{tokenize, Gateway, GatewayError};
use crate::util::fmt_rounded;

pub use refine::{self_refine, write_trace_jsonl, RefineOutcome, RefineStep};

/// Upper bound on rendered tokens for a full week under the reference tokenizer.
pub const TOKEN_BUDGET: usize = 512;

pub const NO_DATA: &str = "no data";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("format spec references unknown field {0:?}")]
    UnknownField(String),
    #[error("invalid format spec: {0}")]
    InvalidSpec(String),
    #[error("cannot measure empty text")]
    EmptyText,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitsStyle {
    /// Unit after every value (`480min`).
    Inline,
    /// Unit once in the column header (`sleep_minutes[min]`).
    Header,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Total,
    Min,
    Max,
    Coverage,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Mean => "mean",
            Aggregation::Total => "total",
            Aggregation::Min => "min",
            Aggregation::Max => "max",
            Aggregation::Coverage => "coverage",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Behavior(BehaviorField),
    Indicator(IndicatorName),
}

impl Column {
    pub fn name(self) -> &'static str {
        match self {
            Column::Behavior(f) => f.as_str(),
            Column::Indicator(n) => n.as_str(),
        }
    }

    /// Short label used in rendered tables and summary rows.
    pub fn label(self) -> &'static str {
        match self {
            Column::Behavior(f) => match f {
                BehaviorField::Steps => "steps",
                BehaviorField::CaloriesIn => "kcal_in",
                BehaviorField::CaloriesBurned => "kcal_out",
                BehaviorField::ExerciseMinutes => "exercise",
                BehaviorField::SleepMinutes => "sleep",
                BehaviorField::SleepEfficiency => "sleep_eff",
                BehaviorField::RestingHr => "rest_hr",
                BehaviorField::PhoneUsageMinutes => "phone",
                BehaviorField::LocationVariance => "loc_var",
            },
            Column::Indicator(n) => match n {
                IndicatorName::SleepQualitySelf => "sleep_q",
                IndicatorName::Readiness => "ready",
                IndicatorName::PanasPos => "pa_pos",
                IndicatorName::PanasNeg => "pa_neg",
                other => other.as_str(),
            },
        }
    }
}

impl FromStr for Column {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(f) = s.parse::<BehaviorField>() {
            return Ok(Column::Behavior(f));
        }
        if let Ok(n) = s.parse::<IndicatorName>() {
            return Ok(Column::Indicator(n));
        }
        Err(ReportError::UnknownField(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatSpec {
    pub version: u32,
    pub column_order: Vec<String>,
    pub units_style: UnitsStyle,
    pub aggregation_rows: Vec<Aggregation>,
    /// Week heading; `{participant}`, `{week}`, `{start}` and `{end}` are substituted.
    pub header_text: String,
    pub omit_absent: bool,
}

impl Default for FormatSpec {
    fn default() -> Self {
        let mut columns: Vec<String> = BehaviorField::ALL.iter().map(|f| f.as_str().to_string()).collect();
        columns.extend(IndicatorName::ALL.iter().map(|n| n.as_str().to_string()));
        Self {
            version: 1,
            column_order: columns,
            units_style: UnitsStyle::Header,
            aggregation_rows: vec![Aggregation::Mean],
            header_text: "Week {week} ({start} to {end})".into(),
            omit_absent: true,
        }
    }
}

impl FormatSpec {
    /// The shipped default, as stored in `formats/default_format.json`.
    pub fn golden_json() -> &'static str {
        include_str!("../../formats/default_format.json")
    }

    pub fn from_path(path: &Path) -> Result<Self, ReportError> {
        let spec: FormatSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.columns()?;
        Ok(spec)
    }

    pub fn write(&self, path: &Path) -> Result<(), ReportError> {
        crate::util::write_json_pretty(path, self)?;
        Ok(())
    }

    /// Resolved columns; errors on unknown names, duplicates or an empty list.
    pub fn columns(&self) -> Result<Vec<Column>, ReportError> {
        if self.column_order.is_empty() {
            return Err(ReportError::InvalidSpec("column_order is empty".into()));
        }
        let mut out: Vec<Column> = Vec::with_capacity(self.column_order.len());
        for name in &self.column_order {
            let col: Column = name.parse()?;
            if out.contains(&col) {
                return Err(ReportError::InvalidSpec(format!("duplicate column {name:?}")));
            }
            out.push(col);
        }
        let mut seen = Vec::new();
        for a in &self.aggregation_rows {
            if seen.contains(a) {
                return Err(ReportError::InvalidSpec(format!(
                    "duplicate aggregation {:?}",
                    a.as_str()
                )));
            }
            seen.push(*a);
        }
        Ok(out)
    }
}

fn header_line(spec: &FormatSpec, bundle: &WeeklyBundle) -> String {
    spec.header_text
        .replace("{participant}", &bundle.participant_id)
        .replace("{week}", &bundle.week_index.to_string())
        .replace("{start}", &bundle.week_start.to_string())
        .replace("{end}", &bundle.week_end().to_string())
}

fn portrait_line(p: &UserPortrait) -> String {
    let mut s = format!("User {}", p.participant_id);
    if !p.age_band.is_empty() {
        let _ = write!(s, ", age {}", p.age_band);
    }
    if !p.gender.is_empty() {
        let _ = write!(s, ", {}", p.gender);
    }
    for t in &p.traits {
        let _ = write!(s, "; {t}");
    }
    s
}

fn unit_label(col: Column) -> String {
    match col {
        Column::Behavior(f) => f.unit().to_string(),
        Column::Indicator(n) => {
            let (lo, hi) = n.scale();
            format!("{lo}-{hi}")
        }
    }
}

fn cell(value: Option<f64>, col: Column, spec: &FormatSpec) -> String {
    match value {
        None => "-".into(),
        Some(v) => {
            let v = crate::util::fmt_exact(v);
            match (spec.units_style, col) {
                (UnitsStyle::Inline, Column::Behavior(f)) => format!("{v}{}", f.unit()),
                (UnitsStyle::Inline, Column::Indicator(n)) => format!("{v}/{}", n.scale().1),
                _ => v,
            }
        }
    }
}

fn is_five_point(col: Column) -> bool {
    matches!(col, Column::Indicator(n) if n.scale() == (1.0, 5.0))
}

fn column_header(col: Column, spec: &FormatSpec) -> String {
    match spec.units_style {
        // five-point items are covered by the section title
        UnitsStyle::Header if is_five_point(col) => col.label().to_string(),
        UnitsStyle::Header => format!("{}[{}]", col.label(), unit_label(col)),
        UnitsStyle::Inline => col.label().to_string(),
    }
}

fn value_of(bundle: &WeeklyBundle, col: Column, row: usize) -> Option<f64> {
    match col {
        Column::Behavior(f) => bundle.behavior.get(row).and_then(|d| d.get(f)),
        Column::Indicator(n) => bundle.records.get(row).and_then(|r| r.get(n)),
    }
}

fn write_table(
    out: &mut String,
    title: &str,
    dates: &[chrono::NaiveDate],
    cols: &[Column],
    bundle: &WeeklyBundle,
    spec: &FormatSpec,
) {
    if dates.is_empty() || cols.is_empty() {
        if !spec.omit_absent {
            let _ = writeln!(out, "{title}: {NO_DATA}");
        }
        return;
    }
    let _ = writeln!(out, "{title}:");
    let header: Vec<String> = cols.iter().map(|c| column_header(*c, spec)).collect();
    let _ = writeln!(out, "day {}", header.join(" "));
    for (row, date) in dates.iter().enumerate() {
        let cells: Vec<String> = cols
            .iter()
            .map(|c| cell(value_of(bundle, *c, row), *c, spec))
            .collect();
        let _ = writeln!(out, "{} {}", date.format("%a"), cells.join(" "));
    }
}

/// Renders one bundle as text. Pure: identical inputs give identical bytes.
pub fn render(
    bundle: &WeeklyBundle,
    portrait: &UserPortrait,
    spec: &FormatSpec,
) -> Result<String, ReportError> {
    let columns = spec.columns()?;
    let mut out = String::new();
    let _ = writeln!(out, "{}", portrait_line(portrait));
    let _ = writeln!(out, "{}", header_line(spec, bundle));
    if bundle.is_empty() {
        let _ = writeln!(out, "{NO_DATA}");
        return Ok(out);
    }

    let summary = bundle.summary();
    let present = |c: &Column| match c {
        Column::Behavior(f) => summary.behavior[f].coverage > 0,
        Column::Indicator(n) => summary.indicators[n].coverage > 0,
    };
    let keep: Vec<Column> = columns
        .iter()
        .copied()
        .filter(|c| !spec.omit_absent || present(c))
        .collect();
    let behavior_cols: Vec<Column> = keep
        .iter()
        .copied()
        .filter(|c| matches!(c, Column::Behavior(_)))
        .collect();
    // Indicators observed once in a multi-day week (weekly surveys) get their
    // own line instead of a column that is empty on every other day.
    let once_in_week = |c: &Column| match c {
        Column::Indicator(n) => summary.indicators[n].coverage == 1 && bundle.records.len() > 1,
        Column::Behavior(_) => false,
    };
    let record_cols: Vec<Column> = keep
        .iter()
        .copied()
        .filter(|c| matches!(c, Column::Indicator(_)) && !once_in_week(c))
        .collect();
    let survey_cols: Vec<Column> = keep.iter().copied().filter(once_in_week).collect();

    let behavior_dates: Vec<_> = bundle.behavior.iter().map(|d| d.date).collect();
    let record_dates: Vec<_> = bundle.records.iter().map(|r| r.date).collect();
    write_table(&mut out, "Behavior", &behavior_dates, &behavior_cols, bundle, spec);
    let records_title = if spec.units_style == UnitsStyle::Header {
        "Records (1-5 unless noted)"
    } else {
        "Records"
    };
    write_table(&mut out, records_title, &record_dates, &record_cols, bundle, spec);
    for (row, entry) in bundle.records.iter().enumerate() {
        let items: Vec<String> = survey_cols
            .iter()
            .filter_map(|c| {
                value_of(bundle, *c, row)
                    .map(|v| format!("{} {}", column_header(*c, spec), cell(Some(v), *c, spec)))
            })
            .collect();
        if !items.is_empty() {
            let _ = writeln!(out, "{} survey: {}", entry.date.format("%a"), items.join(" "));
        }
    }

    if !spec.aggregation_rows.is_empty() && !keep.is_empty() {
        let _ = writeln!(out, "Summary:");
        for col in &keep {
            let s = match col {
                Column::Behavior(f) => &summary.behavior[f],
                Column::Indicator(n) => &summary.indicators[n],
            };
            // a single observation is already in the table verbatim
            if s.coverage == 1 {
                continue;
            }
            for agg in &spec.aggregation_rows {
                let value = match agg {
                    Aggregation::Mean => s.mean.map(|v| fmt_rounded(v, 2)),
                    Aggregation::Total => s.total.map(|v| fmt_rounded(v, 2)),
                    Aggregation::Min => s.min.map(|v| fmt_rounded(v, 2)),
                    Aggregation::Max => s.max.map(|v| fmt_rounded(v, 2)),
                    Aggregation::Coverage => Some(format!("{}/{}", s.coverage, s.days)),
                };
                let _ = writeln!(
                    out,
                    "{} {}: {}",
                    col.label(),
                    agg.as_str(),
                    value.unwrap_or_else(|| "-".into())
                );
            }
        }
    }
    Ok(out)
}

/// Token count under the reference tokenizer (no backend needed).
pub fn reference_token_count(text: &str) -> usize {
    tokenize::count_tokens(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub token_count: usize,
    pub perplexity: f64,
}

/// `exp(-mean logprob)`; `None` for an empty list.
pub fn perplexity_from_logprobs(logprobs: &[f64]) -> Option<f64> {
    if logprobs.is_empty() {
        return None;
    }
    let mean = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    Some((-mean).exp())
}

/// Token count and perplexity of `text` under the gateway's scoring backend.
pub fn measure(text: &str, gateway: &Gateway) -> Result<Measurement, ReportError> {
    if text.is_empty() {
        return Err(ReportError::EmptyText);
    }
    let tokens = gateway.score_logprobs(text)?;
    let lps: Vec<f64> = tokens.iter().map(|t| t.logprob).collect();
    let perplexity = perplexity_from_logprobs(&lps).ok_or(ReportError::EmptyText)?;
    Ok(Measurement {
        token_count: tokens.len(),
        perplexity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorReport {
    pub text: String,
    pub token_count: usize,
    pub perplexity: f64,
    pub format_version: u32,
}

impl BehaviorReport {
    pub fn build(
        bundle: &WeeklyBundle,
        portrait: &UserPortrait,
        spec: &FormatSpec,
        gateway: &Gateway,
    ) -> Result<Self, ReportError> {
        let text = render(bundle, portrait, spec)?;
        let m = measure(&text, gateway)?;
        Ok(Self {
            text,
            token_count: m.token_count,
            perplexity: m.perplexity,
            format_version: spec.version,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{DailyBehavior, MentalIndicator, MentalRecordEntry};
    use crate::gateway::{MockBackend, MockRule};
    use chrono::{Duration, NaiveDate};

    fn week() -> WeeklyBundle {
        let start = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        let mut b = WeeklyBundle::new("p01", 0, start);
        for i in 0..7 {
            let date = start + Duration::days(i);
            let mut d = DailyBehavior::new(date);
            d.steps = Some(1000.0);
            d.sleep_minutes = Some(400.0 + i as f64);
            b.behavior.push(d);
            b.records.push(MentalRecordEntry {
                date,
                indicators: vec![MentalIndicator::new(IndicatorName::Mood, 3.0).unwrap()],
            });
        }
        b
    }

    #[test]
    fn summary_row_for_constant_steps() {
        let text = render(&week(), &UserPortrait::anonymous("p01"), &FormatSpec::default()).unwrap();
        assert!(text.contains("\nsteps mean: 1000\n"), "{text}");
        assert!(text.contains("sleep mean: 403\n"));
    }

    #[test]
    fn empty_bundle_renders_sentinel() {
        let b = WeeklyBundle::new("p01", 2, NaiveDate::from_ymd_opt(2024, 1, 15).unwrap());
        let text = render(&b, &UserPortrait::anonymous("p01"), &FormatSpec::default()).unwrap();
        assert_eq!(
            text,
            "User p01\nWeek 2 (2024-01-15 to 2024-01-21)\nno data\n"
        );
    }

    #[test]
    fn omit_absent_controls_columns() {
        let p = UserPortrait::anonymous("p01");
        let mut spec = FormatSpec::default();
        let text = render(&week(), &p, &spec).unwrap();
        assert!(!text.contains("rest_hr"));
        spec.omit_absent = false;
        let text = render(&week(), &p, &spec).unwrap();
        assert!(text.contains("rest_hr[bpm]"));
        assert!(text.contains("rest_hr mean: -"));
    }

    #[test]
    fn units_styles() {
        let p = UserPortrait::anonymous("p01");
        let spec = FormatSpec {
            units_style: UnitsStyle::Inline,
            ..FormatSpec::default()
        };
        let text = render(&week(), &p, &spec).unwrap();
        assert!(text.contains(" 1000steps "), "{text}");
        assert!(text.contains(" 3/5"));
    }

    #[test]
    fn unknown_and_duplicate_columns_rejected() {
        let p = UserPortrait::anonymous("p01");
        let spec = FormatSpec {
            column_order: vec!["steps".into(), "heart_vibes".into()],
            ..FormatSpec::default()
        };
        let err = render(&week(), &p, &spec).unwrap_err();
        assert!(err.to_string().contains("heart_vibes"));
        let spec = FormatSpec {
            column_order: vec!["steps".into(), "steps".into()],
            ..FormatSpec::default()
        };
        assert!(matches!(render(&week(), &p, &spec), Err(ReportError::InvalidSpec(_))));
        let spec = FormatSpec {
            column_order: vec![],
            ..FormatSpec::default()
        };
        assert!(matches!(render(&week(), &p, &spec), Err(ReportError::InvalidSpec(_))));
    }

    #[test]
    fn distinct_days_give_distinct_text() {
        let p = UserPortrait::anonymous("p01");
        let a = week();
        let mut b = week();
        b.behavior[3].steps = Some(1001.0);
        assert_ne!(
            render(&a, &p, &FormatSpec::default()).unwrap(),
            render(&b, &p, &FormatSpec::default()).unwrap()
        );
    }

    #[test]
    fn golden_spec_matches_default() {
        let golden: FormatSpec = serde_json::from_str(FormatSpec::golden_json()).unwrap();
        assert_eq!(golden, FormatSpec::default());
    }

    #[test]
    fn perplexity_closed_forms() {
        let half = 0.5f64.ln();
        let gw = Gateway::new(MockBackend::new(vec![MockRule::logprobs("*", vec![half])]).unwrap());
        let m = measure("a b c d", &gw).unwrap();
        assert_eq!(m.token_count, 4);
        assert_eq!(m.perplexity, 2.0);

        let gw = Gateway::new(
            MockBackend::new(vec![MockRule::logprobs("*", vec![-1.0, -2.0, -3.0])]).unwrap(),
        );
        let m = measure("a b c", &gw).unwrap();
        assert!((m.perplexity - 2f64.exp()).abs() < 1e-12);
        assert!(matches!(measure("", &gw), Err(ReportError::EmptyText)));
    }
}

#[cfg(test)]
mod budget_tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn synthetic_weeks_fit_token_budget() {
        let out = generate(&SynthConfig::default()).unwrap();
        let mut worst = 0;
        for b in &out.bundles {
            let p = &out.cohort.participant(&b.participant_id).unwrap().portrait;
            let text = render(b, p, &FormatSpec::default()).unwrap();
            worst = worst.max(reference_token_count(&text));
        }
        assert!(worst <= TOKEN_BUDGET, "{worst}");
    }
}

//! Synthetic cohorts generated from a linear latent-status model.
//!
//! For every participant-week a latent status `M` in `[0, 5]` (higher means
//! more distress) drives both observation channels:
//!
//! * behavior `D = g(k_d * M)`, with `g` a fixed piecewise-linear map per field
//!   (see [`BEHAVIOR_CURVES`]); no noise, so behavior is an exact witness of `M`;
//! * records: a signal `s = k_r * M + U`, `U ~ N(0, u_sigma)`, read by each
//!   instrument on its own scale. Five-point items take `s` directly, wider
//!   instruments scale it linearly from `[0, 5]`; items where higher is better
//!   (mood, readiness, sleep quality, positive affect) are mirrored. Values are
//!   clamped to the scale (each clamp is recorded) and kept to two decimals.
//!
//! Ground truth is `G = [M >= label_threshold]`.

use std::io::Write;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{
    BehaviorField, Cohort, DailyBehavior, DatasetKind, IndicatorName, LabelSource,
    MentalIndicator, MentalRecordEntry, Outcome, Participant, Polarity, UserPortrait,
    WeeklyBundle,
};
use crate::util::derive_seed;

pub const M_MIN: f64 = 0.0;
pub const M_MAX: f64 = 5.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("unknown counterfactual label {0:?} (expected personality_traits, stigma or lack_of_awareness)")]
    UnknownLabel(String),
    #[error("bundle {0} has no mental records to modify")]
    NoRecords(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Coupling of one participant-week to its latent status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalFrame {
    pub m_level: f64,
    pub k_d: f64,
    pub k_r: f64,
    pub u_sigma: f64,
    pub seed: u64,
}

impl CausalFrame {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !self.k_d.is_finite() || !self.k_r.is_finite() {
            return Err(SynthError::Config("k_d and k_r must be finite".into()));
        }
        if self.u_sigma.is_nan() || self.u_sigma < 0.0 {
            return Err(SynthError::Config("u_sigma must be >= 0".into()));
        }
        if !(M_MIN..=M_MAX).contains(&self.m_level) {
            return Err(SynthError::Config(format!(
                "m_level {} outside [{M_MIN}, {M_MAX}]",
                self.m_level
            )));
        }
        Ok(())
    }

    /// Behavior for one day under this frame.
    pub fn behavior(&self, date: NaiveDate) -> DailyBehavior {
        let x = self.k_d * self.m_level;
        let mut day = DailyBehavior::new(date);
        for (field, curve, places) in BEHAVIOR_CURVES {
            day.set(*field, Some(round_to(piecewise(curve, x), *places)));
        }
        day
    }

    /// Record signal `k_r * M + noise` before any instrument mapping.
    pub fn record_signal(&self, noise: f64) -> f64 {
        self.k_r * self.m_level + noise
    }
}

/// Piecewise-linear behavior curves over `x = k_d * M`, flat outside the breakpoints.
/// Each entry: field, breakpoints `(x, value)`, decimals kept.
pub type Curve = (BehaviorField, &'static [(f64, f64)], u32);

pub const BEHAVIOR_CURVES: &[Curve] = &[
    (
        BehaviorField::Steps,
        &[(0.0, 10000.0), (2.0, 8000.0), (3.5, 5000.0), (5.0, 2500.0)],
        0,
    ),
    (
        BehaviorField::CaloriesIn,
        &[(0.0, 2200.0), (3.0, 2000.0), (5.0, 1600.0)],
        0,
    ),
    (
        BehaviorField::CaloriesBurned,
        &[(0.0, 2600.0), (5.0, 1900.0)],
        0,
    ),
    (
        BehaviorField::ExerciseMinutes,
        &[(0.0, 60.0), (3.0, 30.0), (5.0, 10.0)],
        0,
    ),
    (
        BehaviorField::SleepMinutes,
        &[(0.0, 480.0), (2.0, 450.0), (3.5, 390.0), (5.0, 330.0)],
        0,
    ),
    (
        BehaviorField::SleepEfficiency,
        &[(0.0, 0.93), (5.0, 0.78)],
        2,
    ),
    (BehaviorField::RestingHr, &[(0.0, 60.0), (5.0, 78.0)], 0),
    (
        BehaviorField::PhoneUsageMinutes,
        &[(0.0, 150.0), (5.0, 330.0)],
        0,
    ),
    (
        BehaviorField::LocationVariance,
        &[(0.0, 1.0), (5.0, 0.3)],
        2,
    ),
];

/// Indicators reported every day; the rest are weekly surveys on the last day.
const DAILY_INDICATORS: [IndicatorName; 5] = [
    IndicatorName::Fatigue,
    IndicatorName::Mood,
    IndicatorName::Stress,
    IndicatorName::SleepQualitySelf,
    IndicatorName::Readiness,
];
const WEEKLY_INDICATORS: [IndicatorName; 4] = [
    IndicatorName::Phq4,
    IndicatorName::Pss4,
    IndicatorName::PanasPos,
    IndicatorName::PanasNeg,
];

pub fn piecewise(curve: &[(f64, f64)], x: f64) -> f64 {
    let (first, last) = (curve[0], curve[curve.len() - 1]);
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    for w in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x <= x1 {
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    last.1
}

fn round_to(x: f64, places: u32) -> f64 {
    let f = 10f64.powi(places as i32);
    (x * f).round() / f
}

/// Maps a record signal onto an instrument's scale before clamping.
pub fn instrument_value(name: IndicatorName, signal: f64) -> f64 {
    let (min, max) = name.scale();
    let forward = if (min, max) == (1.0, 5.0) {
        signal
    } else {
        min + (max - min) * signal / M_MAX
    };
    match name.polarity() {
        Polarity::HigherIsWorse => forward,
        Polarity::HigherIsBetter => min + max - forward,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MPrior {
    pub mean: f64,
    pub sd: f64,
    /// Standard deviation of week-to-week drift around the participant baseline.
    pub weekly_drift_sd: f64,
}

impl Default for MPrior {
    fn default() -> Self {
        Self {
            mean: 2.2,
            sd: 1.0,
            weekly_drift_sd: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_participants: usize,
    pub weeks_per_participant: usize,
    pub frame_prior: MPrior,
    pub k_d: f64,
    pub k_r: f64,
    pub u_sigma: f64,
    pub label_threshold: f64,
    pub seed: u64,
    pub start_date: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_participants: 40,
            weeks_per_participant: 4,
            frame_prior: MPrior::default(),
            k_d: 1.0,
            k_r: 1.0,
            u_sigma: 0.5,
            label_threshold: 3.5,
            seed: 7,
            start_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_participants < 1 || self.weeks_per_participant < 1 {
            return Err(SynthError::Config("counts must be >= 1".into()));
        }
        if !(M_MIN..=M_MAX).contains(&self.label_threshold) {
            return Err(SynthError::Config("label_threshold outside M range".into()));
        }
        if self.frame_prior.sd.is_nan() || self.frame_prior.sd <= 0.0 || self.frame_prior.weekly_drift_sd.is_nan() || self.frame_prior.weekly_drift_sd < 0.0 {
            return Err(SynthError::Config("prior sd must be > 0, drift sd >= 0".into()));
        }
        CausalFrame {
            m_level: 0.0,
            k_d: self.k_d,
            k_r: self.k_r,
            u_sigma: self.u_sigma,
            seed: self.seed,
        }
        .validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub participant_id: String,
    pub week_index: u32,
    pub m_level: f64,
    pub g_truth: Outcome,
}

/// A record value that hit its scale bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClampEvent {
    pub participant_id: String,
    pub week_index: u32,
    pub date: NaiveDate,
    pub indicator: IndicatorName,
    pub unclamped: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCohort {
    pub cohort: Cohort,
    /// Labelled with `label_source = synthetic`.
    pub bundles: Vec<WeeklyBundle>,
    pub truth: Vec<TruthRow>,
    pub clamps: Vec<ClampEvent>,
}

impl SynthCohort {
    pub fn positive_fraction(&self) -> f64 {
        if self.truth.is_empty() {
            return 0.0;
        }
        self.truth.iter().filter(|t| t.g_truth.is_at_risk()).count() as f64
            / self.truth.len() as f64
    }

    pub fn write_truth_csv(&self, path: &Path) -> Result<(), SynthError> {
        write_truth_csv(path, &self.truth)
    }
}

pub fn write_truth_csv(path: &Path, rows: &[TruthRow]) -> Result<(), SynthError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "participant_id,week_index,m_level,g_truth")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.participant_id,
            r.week_index,
            crate::util::fmt_exact(r.m_level),
            r.g_truth
        )?;
    }
    out.flush()?;
    Ok(())
}

fn sample_truncated(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    let normal = Normal::new(mean, sd).expect("sd > 0");
    for _ in 0..10_000 {
        let v = normal.sample(rng);
        if (M_MIN..=M_MAX).contains(&v) {
            return v;
        }
    }
    mean.clamp(M_MIN, M_MAX)
}

struct ParticipantDraw {
    participant: Participant,
    bundles: Vec<WeeklyBundle>,
    truth: Vec<TruthRow>,
    clamps: Vec<ClampEvent>,
}

fn participant_id(index: usize) -> String {
    format!("s{:03}", index + 1)
}

fn draw_participant(config: &SynthConfig, index: usize) -> ParticipantDraw {
    let id = participant_id(index);
    let seed = derive_seed(config.seed, &id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = &config.frame_prior;
    let baseline = sample_truncated(&mut rng, prior.mean, prior.sd);
    let drift = Normal::new(0.0, prior.weekly_drift_sd.max(f64::MIN_POSITIVE)).expect("valid");
    let noise = Normal::new(0.0, config.u_sigma.max(f64::MIN_POSITIVE)).expect("valid");

    let age_bands = ["18-24", "25-34", "35-44", "45-60"];
    let portrait = UserPortrait {
        participant_id: id.clone(),
        age_band: age_bands[rng.random_range(0..age_bands.len())].to_string(),
        gender: if rng.random_bool(0.5) { "female" } else { "male" }.to_string(),
        traits: vec![],
    };

    let mut behavior = Vec::new();
    let mut records = Vec::new();
    let mut bundles = Vec::new();
    let mut truth = Vec::new();
    let mut clamps = Vec::new();

    for week in 0..config.weeks_per_participant {
        let m_level = if prior.weekly_drift_sd > 0.0 {
            (baseline + drift.sample(&mut rng)).clamp(M_MIN, M_MAX)
        } else {
            baseline
        };
        let frame = CausalFrame {
            m_level,
            k_d: config.k_d,
            k_r: config.k_r,
            u_sigma: config.u_sigma,
            seed,
        };
        let week_start = config.start_date + Duration::days(7 * week as i64);
        let mut bundle = WeeklyBundle::new(&id, week as u32, week_start);
        for day in 0..7 {
            let date = week_start + Duration::days(day);
            let d = frame.behavior(date);
            bundle.behavior.push(d.clone());
            behavior.push(d);

            let mut entry = MentalRecordEntry {
                date,
                indicators: Vec::new(),
            };
            let mut names: Vec<IndicatorName> = DAILY_INDICATORS.to_vec();
            if day == 6 {
                names.extend(WEEKLY_INDICATORS);
            }
            for name in names {
                let u = if config.u_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                let raw = instrument_value(name, frame.record_signal(u));
                let (min, max) = name.scale();
                let value = round_to(raw.clamp(min, max), 2).clamp(min, max);
                if raw < min || raw > max {
                    clamps.push(ClampEvent {
                        participant_id: id.clone(),
                        week_index: week as u32,
                        date,
                        indicator: name,
                        unclamped: raw,
                    });
                }
                entry
                    .indicators
                    .push(MentalIndicator::new(name, value).expect("clamped into scale"));
            }
            entry.indicators.sort_by_key(|i| i.name);
            bundle.records.push(entry.clone());
            records.push(entry);
        }
        let g = Outcome::from_bool(m_level >= config.label_threshold);
        bundle.label = Some(g);
        bundle.label_source = Some(LabelSource::Synthetic);
        bundles.push(bundle);
        truth.push(TruthRow {
            participant_id: id.clone(),
            week_index: week as u32,
            m_level,
            g_truth: g,
        });
    }

    ParticipantDraw {
        participant: Participant {
            portrait,
            behavior,
            records,
        },
        bundles,
        truth,
        clamps,
    }
}

/// Generates a labelled cohort plus its hidden truth table.
///
/// Each participant draws from its own stream seeded by `(seed, participant id)`,
/// so output does not depend on scheduling.
pub fn generate(config: &SynthConfig) -> Result<SynthCohort, SynthError> {
    config.validate()?;
    let draws: Vec<ParticipantDraw> = (0..config.n_participants)
        .into_par_iter()
        .map(|i| draw_participant(config, i))
        .collect();
    let mut out = SynthCohort {
        cohort: Cohort::empty(DatasetKind::Synthetic),
        bundles: Vec::new(),
        truth: Vec::new(),
        clamps: Vec::new(),
    };
    for d in draws {
        out.cohort.participants.push(d.participant);
        out.bundles.extend(d.bundles);
        out.truth.extend(d.truth);
        out.clamps.extend(d.clamps);
    }
    Ok(out)
}

/// Reasons a person may under-report distress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfLabel {
    PersonalityTraits,
    Stigma,
    LackOfAwareness,
}

impl CfLabel {
    pub const ALL: [CfLabel; 3] = [
        CfLabel::PersonalityTraits,
        CfLabel::Stigma,
        CfLabel::LackOfAwareness,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CfLabel::PersonalityTraits => "personality_traits",
            CfLabel::Stigma => "stigma",
            CfLabel::LackOfAwareness => "lack_of_awareness",
        }
    }

    /// Phrase used in prompts ("personality traits", ...).
    pub fn phrase(self) -> &'static str {
        match self {
            CfLabel::PersonalityTraits => "personality traits",
            CfLabel::Stigma => "stigma",
            CfLabel::LackOfAwareness => "lack of awareness",
        }
    }

    fn rule(self, name: IndicatorName) -> Option<Shift> {
        use IndicatorName::*;
        match self {
            CfLabel::Stigma => match name {
                Mood | Stress | Fatigue | Phq4 | Pss4 | PanasNeg | PanasPos => {
                    Some(Shift::ToNeutral)
                }
                _ => None,
            },
            CfLabel::PersonalityTraits => Some(Shift::Halfway),
            CfLabel::LackOfAwareness => match name {
                Fatigue | SleepQualitySelf | Readiness | Phq4 | Pss4 => Some(Shift::ToNeutral),
                _ => None,
            },
        }
    }

    fn reason(self) -> &'static str {
        match self {
            CfLabel::Stigma => "concealed because of stigma around mental health",
            CfLabel::PersonalityTraits => "understated by a reserved, stoic reporting style",
            CfLabel::LackOfAwareness => "not recognised as a symptom (lack of awareness)",
        }
    }
}

impl std::fmt::Display for CfLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CfLabel {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        CfLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == key)
            .ok_or_else(|| SynthError::UnknownLabel(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy)]
enum Shift {
    ToNeutral,
    Halfway,
}

fn is_adverse(name: IndicatorName, value: f64) -> bool {
    match name.polarity() {
        Polarity::HigherIsWorse => value > name.neutral(),
        Polarity::HigherIsBetter => value < name.neutral(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualBundle {
    pub bundle: WeeklyBundle,
    pub cf_label: CfLabel,
    /// One explanation per modified indicator value.
    pub clues: Vec<String>,
}

/// Rewrites the mental records as a person concealing distress would report them.
///
/// Behavior days are copied untouched; the latent label is kept. Only adverse
/// values move, and only toward the neutral point, so already-neutral records
/// are a fixed point with no clues.
pub fn inject_counterfactual(
    bundle: &WeeklyBundle,
    label: CfLabel,
) -> Result<CounterfactualBundle, SynthError> {
    if bundle.records.is_empty() {
        return Err(SynthError::NoRecords(format!(
            "{}#{}",
            bundle.participant_id, bundle.week_index
        )));
    }
    let mut out = bundle.clone();
    let mut clues = Vec::new();
    for entry in &mut out.records {
        for ind in &mut entry.indicators {
            let Some(shift) = label.rule(ind.name) else {
                continue;
            };
            if !is_adverse(ind.name, ind.value) {
                continue;
            }
            let neutral = ind.name.neutral();
            let new = match shift {
                Shift::ToNeutral => neutral,
                Shift::Halfway => neutral + (ind.value - neutral) / 2.0,
            };
            let new = new.clamp(ind.scale_min, ind.scale_max);
            clues.push(format!(
                "{}: {} reported as {} instead of {}, {}",
                entry.date,
                ind.name,
                crate::util::fmt_exact(new),
                crate::util::fmt_exact(ind.value),
                label.reason()
            ));
            ind.value = new;
        }
    }
    Ok(CounterfactualBundle {
        bundle: out,
        cf_label: label,
        clues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(m: f64, k_d: f64, k_r: f64) -> CausalFrame {
        CausalFrame {
            m_level: m,
            k_d,
            k_r,
            u_sigma: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn record_signal_without_noise_is_k_r_times_m() {
        let f = frame(4.0, 1.0, 1.0);
        assert_eq!(f.record_signal(0.0), 4.0);
        // burden-oriented five-point items read the signal directly, mood is mirrored
        assert_eq!(instrument_value(IndicatorName::Stress, 4.0), 4.0);
        assert_eq!(instrument_value(IndicatorName::Mood, 4.0), 2.0);
        assert_eq!(instrument_value(IndicatorName::Phq4, 5.0), 12.0);
    }

    #[test]
    fn zero_behavior_coupling_flattens_behavior() {
        let date = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        let a = frame(0.5, 0.0, 1.0).behavior(date);
        let b = frame(4.5, 0.0, 1.0).behavior(date);
        assert_eq!(a, b);
    }

    #[test]
    fn behavior_is_monotone_in_status() {
        let date = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        let low = frame(1.0, 1.0, 1.0).behavior(date);
        let high = frame(4.0, 1.0, 1.0).behavior(date);
        assert!(low.steps > high.steps);
        assert!(low.sleep_minutes > high.sleep_minutes);
    }

    #[test]
    fn piecewise_interpolates_and_saturates() {
        let c = &[(0.0, 10.0), (2.0, 6.0), (4.0, 6.0)];
        assert_eq!(piecewise(c, -1.0), 10.0);
        assert_eq!(piecewise(c, 1.0), 8.0);
        assert_eq!(piecewise(c, 3.0), 6.0);
        assert_eq!(piecewise(c, 9.0), 6.0);
    }

    #[test]
    fn same_seed_same_cohort() {
        let cfg = SynthConfig {
            n_participants: 6,
            ..Default::default()
        };
        let a = serde_json::to_string(&generate(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&generate(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let other = SynthConfig { seed: 8, ..cfg };
        assert_ne!(a, serde_json::to_string(&generate(&other).unwrap()).unwrap());
    }

    #[test]
    fn generated_bundles_are_valid() {
        let out = generate(&SynthConfig::default()).unwrap();
        assert_eq!(out.bundles.len(), 40 * 4);
        for b in &out.bundles {
            b.validate().unwrap();
            assert_eq!(b.label_source, Some(LabelSource::Synthetic));
        }
        for (b, t) in out.bundles.iter().zip(&out.truth) {
            assert_eq!(b.label, Some(t.g_truth));
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = SynthConfig {
            n_participants: 0,
            ..Default::default()
        };
        assert!(generate(&bad).is_err());
        let bad = SynthConfig {
            u_sigma: -1.0,
            ..Default::default()
        };
        assert!(generate(&bad).is_err());
        let bad = SynthConfig {
            label_threshold: 6.0,
            ..Default::default()
        };
        assert!(generate(&bad).is_err());
    }

    fn bundle_with_mood(mood: f64) -> WeeklyBundle {
        let date = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        let mut b = WeeklyBundle::new("p", 0, date);
        let mut d = DailyBehavior::new(date);
        d.steps = Some(3000.0);
        b.behavior.push(d);
        b.records.push(MentalRecordEntry {
            date,
            indicators: vec![MentalIndicator::new(IndicatorName::Mood, mood).unwrap()],
        });
        b
    }

    #[test]
    fn stigma_conceals_low_mood() {
        let b = bundle_with_mood(1.0);
        let cf = inject_counterfactual(&b, CfLabel::Stigma).unwrap();
        assert_eq!(cf.bundle.records[0].get(IndicatorName::Mood), Some(3.0));
        assert_eq!(cf.clues.len(), 1);
        assert!(cf.clues[0].contains("concealed"));
        assert_eq!(cf.bundle.behavior, b.behavior);
    }

    #[test]
    fn neutral_records_are_a_fixed_point() {
        let b = bundle_with_mood(3.0);
        for label in CfLabel::ALL {
            let cf = inject_counterfactual(&b, label).unwrap();
            assert_eq!(cf.bundle, b);
            assert!(cf.clues.is_empty());
        }
    }

    #[test]
    fn personality_moves_halfway() {
        let cf = inject_counterfactual(&bundle_with_mood(1.0), CfLabel::PersonalityTraits).unwrap();
        assert_eq!(cf.bundle.records[0].get(IndicatorName::Mood), Some(2.0));
    }

    #[test]
    fn unknown_label_is_an_error() {
        assert!("optimism".parse::<CfLabel>().is_err());
        assert_eq!("lack of awareness".parse::<CfLabel>().unwrap(), CfLabel::LackOfAwareness);
    }
}

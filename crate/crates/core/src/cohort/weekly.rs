use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use super::{BehaviorField, Cohort, CohortError, IndicatorName, WeeklyBundle};
use crate::util::{read_jsonl, write_jsonl};

/// First day of the week containing `date` when weeks begin on `anchor`.
pub fn week_start_for(date: NaiveDate, anchor: Weekday) -> NaiveDate {
    let offset = (date.weekday().num_days_from_monday() + 7 - anchor.num_days_from_monday()) % 7;
    date - Duration::days(offset as i64)
}

/// Splits every participant's streams into anchored weeks.
///
/// Week 0 is the week holding the participant's earliest behavior or record
/// date. Weeks with neither behavior nor record days are not emitted; partial
/// weeks are kept.
pub fn aggregate_weekly(cohort: &Cohort, anchor: Weekday) -> Vec<WeeklyBundle> {
    let mut bundles = Vec::new();
    for p in &cohort.participants {
        let first = p
            .behavior
            .iter()
            .map(|d| d.date)
            .chain(p.records.iter().map(|r| r.date))
            .min();
        let Some(first) = first else { continue };
        let origin = week_start_for(first, anchor);
        let index_of = |date: NaiveDate| ((week_start_for(date, anchor) - origin).num_days() / 7) as u32;

        let mut weeks: BTreeMap<u32, WeeklyBundle> = BTreeMap::new();
        let new_week =
            |idx: u32| WeeklyBundle::new(p.id(), idx, origin + Duration::days(7 * idx as i64));
        for day in &p.behavior {
            let idx = index_of(day.date);
            weeks
                .entry(idx)
                .or_insert_with(|| new_week(idx))
                .behavior
                .push(day.clone());
        }
        for rec in &p.records {
            let idx = index_of(rec.date);
            weeks
                .entry(idx)
                .or_insert_with(|| new_week(idx))
                .records
                .push(rec.clone());
        }
        bundles.extend(weeks.into_values());
    }
    bundles
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub mean: Option<f64>,
    pub total: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// Days in the week that report the field.
    pub coverage: usize,
    /// Days in the week with any row at all.
    pub days: usize,
}

impl FieldSummary {
    fn from_values(values: &[f64], days: usize) -> Self {
        if values.is_empty() {
            return Self {
                mean: None,
                total: None,
                min: None,
                max: None,
                coverage: 0,
                days,
            };
        }
        let total: f64 = values.iter().sum();
        Self {
            mean: Some(total / values.len() as f64),
            total: Some(total),
            min: values.iter().copied().reduce(f64::min),
            max: values.iter().copied().reduce(f64::max),
            coverage: values.len(),
            days,
        }
    }
}

/// Per-field weekly statistics with explicit coverage counts (absent data is never zero-filled).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklySummary {
    pub behavior: BTreeMap<BehaviorField, FieldSummary>,
    pub indicators: BTreeMap<IndicatorName, FieldSummary>,
}

impl WeeklyBundle {
    pub fn summary(&self) -> WeeklySummary {
        let behavior = BehaviorField::ALL
            .into_iter()
            .map(|f| {
                let vals: Vec<f64> = self.behavior.iter().filter_map(|d| d.get(f)).collect();
                (f, FieldSummary::from_values(&vals, self.behavior.len()))
            })
            .collect();
        let indicators = IndicatorName::ALL
            .into_iter()
            .map(|n| {
                let vals: Vec<f64> = self.records.iter().filter_map(|r| r.get(n)).collect();
                (n, FieldSummary::from_values(&vals, self.records.len()))
            })
            .collect();
        WeeklySummary {
            behavior,
            indicators,
        }
    }
}

/// Canonical bundle output: one JSON object per line, fixed field order.
pub fn write_bundles_jsonl(path: &Path, bundles: &[WeeklyBundle]) -> Result<(), CohortError> {
    write_jsonl(path, bundles).map_err(|source| CohortError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_bundles_jsonl(path: &Path) -> Result<Vec<WeeklyBundle>, CohortError> {
    let bundles: Vec<WeeklyBundle> = read_jsonl(path).map_err(|source| CohortError::Io {
        path: path.display().to_string(),
        source,
    })?;
    for b in &bundles {
        b.validate()
            .map_err(|e| CohortError::Bundle(format!("{}#{}: {e}", b.participant_id, b.week_index)))?;
    }
    Ok(bundles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{DailyBehavior, DatasetKind, Participant, UserPortrait};

    fn day(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn cohort_with_days(n: usize, steps: f64) -> Cohort {
        let start = day(2024, 1, 1); // a Monday
        let behavior = (0..n)
            .map(|i| {
                let mut d = DailyBehavior::new(start + Duration::days(i as i64));
                d.steps = Some(steps);
                d
            })
            .collect();
        Cohort {
            dataset: DatasetKind::Pmdata,
            participants: vec![Participant {
                portrait: UserPortrait::anonymous("p01"),
                behavior,
                records: vec![],
            }],
            report: Default::default(),
        }
    }

    #[test]
    fn week_start_respects_anchor() {
        assert_eq!(week_start_for(day(2024, 1, 3), Weekday::Mon), day(2024, 1, 1));
        assert_eq!(week_start_for(day(2024, 1, 3), Weekday::Sun), day(2023, 12, 31));
        assert_eq!(week_start_for(day(2024, 1, 1), Weekday::Mon), day(2024, 1, 1));
    }

    #[test]
    fn fourteen_days_make_two_bundles() {
        let bundles = aggregate_weekly(&cohort_with_days(14, 1000.0), Weekday::Mon);
        assert_eq!(bundles.len(), 2);
        for b in &bundles {
            assert_eq!(b.behavior.len(), 7);
            assert_eq!(b.behavior_mean(BehaviorField::Steps), Some(1000.0));
        }
        assert_eq!(bundles[1].week_index, 1);
    }

    #[test]
    fn empty_cohort_gives_no_bundles() {
        assert!(aggregate_weekly(&Cohort::empty(DatasetKind::Pmdata), Weekday::Mon).is_empty());
    }

    #[test]
    fn single_day_single_bundle() {
        let bundles = aggregate_weekly(&cohort_with_days(1, 10.0), Weekday::Mon);
        assert_eq!(bundles.len(), 1);
        assert_eq!(bundles[0].behavior.len(), 1);
    }

    #[test]
    fn gap_weeks_are_omitted() {
        let mut cohort = cohort_with_days(1, 10.0);
        let mut far = DailyBehavior::new(day(2024, 1, 22));
        far.steps = Some(1.0);
        cohort.participants[0].behavior.push(far);
        let bundles = aggregate_weekly(&cohort, Weekday::Mon);
        assert_eq!(
            bundles.iter().map(|b| b.week_index).collect::<Vec<_>>(),
            vec![0, 3]
        );
    }

    #[test]
    fn summary_reports_coverage_without_zero_fill() {
        let mut cohort = cohort_with_days(3, 900.0);
        cohort.participants[0].behavior[1].steps = None;
        let b = &aggregate_weekly(&cohort, Weekday::Mon)[0];
        let s = &b.summary().behavior[&BehaviorField::Steps];
        assert_eq!(s.coverage, 2);
        assert_eq!(s.days, 3);
        assert_eq!(s.mean, Some(900.0));
        assert_eq!(s.total, Some(1800.0));
        assert_eq!(b.summary().behavior[&BehaviorField::CaloriesIn].mean, None);
    }
}

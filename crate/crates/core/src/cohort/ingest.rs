//! CSV ingestion for PMData-like and Globem-like cohort folders.
//!
//! Layout: `<root>/<participant_id>/{behavior_file, record_file, portrait.json?}`.
//! Column names come from a [`DatasetSchema`]; a `columns.json` at the root
//! replaces the built-in mapping for that dataset.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    BehaviorField, Cohort, CohortError, DailyBehavior, IndicatorName, MentalIndicator,
    MentalRecordEntry, Participant, UserPortrait,
};
use crate::util::fmt_exact;

pub const SCHEMA_FILE: &str = "columns.json";
pub const PORTRAIT_FILE: &str = "portrait.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Pmdata,
    Globem,
    Synthetic,
}

/// Binds canonical field names to the CSV headers of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub behavior_file: String,
    pub record_file: String,
    pub date_column: String,
    pub behavior_columns: BTreeMap<BehaviorField, String>,
    pub record_columns: BTreeMap<IndicatorName, String>,
}

impl DatasetSchema {
    pub fn pmdata() -> Self {
        use BehaviorField::*;
        use IndicatorName::*;
        Self {
            behavior_file: "daily.csv".into(),
            record_file: "wellness.csv".into(),
            date_column: "date".into(),
            behavior_columns: [
                Steps,
                CaloriesIn,
                CaloriesBurned,
                ExerciseMinutes,
                SleepMinutes,
                RestingHr,
            ]
            .into_iter()
            .map(|f| (f, f.as_str().to_string()))
            .collect(),
            record_columns: [
                (Fatigue, "fatigue"),
                (Mood, "mood"),
                (Stress, "stress"),
                (SleepQualitySelf, "sleep_quality"),
                (Readiness, "readiness"),
            ]
            .into_iter()
            .map(|(k, v)| (k, v.to_string()))
            .collect(),
        }
    }

    pub fn globem() -> Self {
        use BehaviorField::*;
        use IndicatorName::*;
        Self {
            behavior_file: "daily.csv".into(),
            record_file: "surveys.csv".into(),
            date_column: "date".into(),
            behavior_columns: [
                Steps,
                SleepMinutes,
                SleepEfficiency,
                PhoneUsageMinutes,
                LocationVariance,
            ]
            .into_iter()
            .map(|f| (f, f.as_str().to_string()))
            .collect(),
            record_columns: [Phq4, Pss4, PanasPos, PanasNeg]
                .into_iter()
                .map(|k| (k, k.as_str().to_string()))
                .collect(),
        }
    }

    /// Union of both layouts, used for synthetic cohorts.
    pub fn synthetic() -> Self {
        let mut s = Self::pmdata();
        let g = Self::globem();
        s.behavior_columns.extend(g.behavior_columns);
        s.record_columns.extend(g.record_columns);
        s.record_file = "records.csv".into();
        s
    }

    pub fn for_kind(kind: DatasetKind) -> Self {
        match kind {
            DatasetKind::Pmdata => Self::pmdata(),
            DatasetKind::Globem => Self::globem(),
            DatasetKind::Synthetic => Self::synthetic(),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, CohortError> {
        let text = fs::read_to_string(path).map_err(|source| CohortError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| CohortError::Schema {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub file: String,
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileError {
    pub path: String,
    pub message: String,
}

/// Everything that was not loaded, with enough context to find it again.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub rejected_rows: Vec<RejectedRow>,
    pub file_errors: Vec<FileError>,
}

impl IngestReport {
    pub fn is_clean(&self) -> bool {
        self.rejected_rows.is_empty() && self.file_errors.is_empty()
    }

    fn merge(&mut self, other: IngestReport) {
        self.rejected_rows.extend(other.rejected_rows);
        self.file_errors.extend(other.file_errors);
    }
}

pub fn parse_pmdata(root: &Path) -> Result<Cohort, CohortError> {
    let schema = schema_or_default(root, DatasetKind::Pmdata)?;
    parse_pmdata_with(root, &schema)
}

pub fn parse_pmdata_with(root: &Path, schema: &DatasetSchema) -> Result<Cohort, CohortError> {
    parse_cohort(root, schema, DatasetKind::Pmdata)
}

pub fn parse_globem(root: &Path) -> Result<Cohort, CohortError> {
    let schema = schema_or_default(root, DatasetKind::Globem)?;
    parse_globem_with(root, &schema)
}

pub fn parse_globem_with(root: &Path, schema: &DatasetSchema) -> Result<Cohort, CohortError> {
    parse_cohort(root, schema, DatasetKind::Globem)
}

fn schema_or_default(root: &Path, kind: DatasetKind) -> Result<DatasetSchema, CohortError> {
    let candidate = root.join(SCHEMA_FILE);
    if candidate.is_file() {
        DatasetSchema::from_path(&candidate)
    } else {
        Ok(DatasetSchema::for_kind(kind))
    }
}

pub(crate) fn parse_cohort(
    root: &Path,
    schema: &DatasetSchema,
    kind: DatasetKind,
) -> Result<Cohort, CohortError> {
    if !root.is_dir() {
        return Err(CohortError::MissingDirectory(root.display().to_string()));
    }
    let entries = fs::read_dir(root).map_err(|source| CohortError::Io {
        path: root.display().to_string(),
        source,
    })?;
    let mut folders: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    folders.sort();

    let parsed: Vec<(Participant, IngestReport)> = folders
        .par_iter()
        .map(|dir| parse_participant(dir, schema))
        .collect();

    let mut report = IngestReport::default();
    let mut participants = Vec::with_capacity(parsed.len());
    for (p, r) in parsed {
        report.merge(r);
        participants.push(p);
    }
    participants.sort_by(|a, b| a.id().cmp(b.id()));
    Ok(Cohort {
        dataset: kind,
        participants,
        report,
    })
}

fn parse_participant(dir: &Path, schema: &DatasetSchema) -> (Participant, IngestReport) {
    let id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut report = IngestReport::default();

    let portrait_path = dir.join(PORTRAIT_FILE);
    let portrait = if portrait_path.is_file() {
        match fs::read_to_string(&portrait_path)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str::<UserPortrait>(&t).map_err(|e| e.to_string()))
        {
            Ok(mut p) => {
                p.participant_id = id.clone();
                p
            }
            Err(message) => {
                report.file_errors.push(FileError {
                    path: portrait_path.display().to_string(),
                    message,
                });
                UserPortrait::anonymous(&id)
            }
        }
    } else {
        UserPortrait::anonymous(&id)
    };

    let behavior = read_table(&dir.join(&schema.behavior_file), schema, &mut report, |date, row| {
        let mut day = DailyBehavior::new(date);
        for (field, column) in &schema.behavior_columns {
            if let Some(raw) = row.get(column.as_str()) {
                day.set(*field, parse_number(raw, field.as_str())?);
            }
        }
        day.validate()?;
        Ok(day)
    });

    let records = read_table(&dir.join(&schema.record_file), schema, &mut report, |date, row| {
        let mut entry = MentalRecordEntry {
            date,
            indicators: Vec::new(),
        };
        for (name, column) in &schema.record_columns {
            if let Some(raw) = row.get(column.as_str()) {
                if let Some(v) = parse_number(raw, name.as_str())? {
                    let ind = MentalIndicator::new(*name, v).map_err(|e| e.to_string())?;
                    entry.indicators.push(ind);
                }
            }
        }
        entry.indicators.sort_by_key(|i| i.name);
        Ok(entry)
    });

    (
        Participant {
            portrait,
            behavior,
            records,
        },
        report,
    )
}

fn parse_number(raw: &str, name: &str) -> Result<Option<f64>, String> {
    let raw = raw.trim();
    if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    raw.parse::<f64>()
        .map(Some)
        .map_err(|_| format!("{name}={raw:?} is not a number"))
}

trait Dated {
    fn date(&self) -> NaiveDate;
}

impl Dated for DailyBehavior {
    fn date(&self) -> NaiveDate {
        self.date
    }
}

impl Dated for MentalRecordEntry {
    fn date(&self) -> NaiveDate {
        self.date
    }
}

/// Reads one per-participant CSV. A missing file yields no rows; a bad header is a
/// file error; a bad row is rejected with its line number.
fn read_table<T: Dated>(
    path: &Path,
    schema: &DatasetSchema,
    report: &mut IngestReport,
    mut build: impl FnMut(NaiveDate, &BTreeMap<&str, &str>) -> Result<T, String>,
) -> Vec<T> {
    if !path.is_file() {
        return Vec::new();
    }
    let file_name = path.display().to_string();
    let mut reader = match csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
    {
        Ok(r) => r,
        Err(e) => {
            report.file_errors.push(FileError {
                path: file_name,
                message: e.to_string(),
            });
            return Vec::new();
        }
    };
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => {
            report.file_errors.push(FileError {
                path: file_name,
                message: format!("unparseable header: {e}"),
            });
            return Vec::new();
        }
    };
    if !headers.iter().any(|h| h == schema.date_column) {
        report.file_errors.push(FileError {
            path: file_name,
            message: format!(
                "unparseable header: missing {:?} column (found {:?})",
                schema.date_column,
                headers.iter().collect::<Vec<_>>()
            ),
        });
        return Vec::new();
    }

    let mut out: Vec<T> = Vec::new();
    let mut seen = BTreeSet::new();
    for result in reader.records() {
        let record = match result {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                report.rejected_rows.push(RejectedRow {
                    file: file_name.clone(),
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != headers.len() {
            report.rejected_rows.push(RejectedRow {
                file: file_name.clone(),
                line,
                reason: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
            continue;
        }
        let row: BTreeMap<&str, &str> = headers.iter().zip(record.iter()).collect();
        let outcome = row
            .get(schema.date_column.as_str())
            .ok_or_else(|| "missing date".to_string())
            .and_then(|d| {
                NaiveDate::parse_from_str(d, "%Y-%m-%d").map_err(|e| format!("date {d:?}: {e}"))
            })
            .and_then(|date| {
                if seen.contains(&date) {
                    Err(format!("duplicate date {date}"))
                } else {
                    build(date, &row)
                }
            });
        match outcome {
            Ok(item) => {
                seen.insert(item.date());
                out.push(item);
            }
            Err(reason) => report.rejected_rows.push(RejectedRow {
                file: file_name.clone(),
                line,
                reason,
            }),
        }
    }
    out.sort_by_key(|t| t.date());
    out
}

impl Cohort {
    /// Writes the cohort back out in the canonical folder layout of `schema`.
    ///
    /// Output is byte-stable: columns follow the canonical field order, numbers
    /// use their shortest round-trip form and absent values are empty cells.
    pub fn write_dir(&self, root: &Path, schema: &DatasetSchema) -> Result<(), CohortError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| CohortError::Io { path, source }
        };
        fs::create_dir_all(root).map_err(io(root))?;
        for p in &self.participants {
            let dir = root.join(p.id());
            fs::create_dir_all(&dir).map_err(io(&dir))?;

            let mut text = String::new();
            let fields: Vec<BehaviorField> = BehaviorField::ALL
                .into_iter()
                .filter(|f| schema.behavior_columns.contains_key(f))
                .collect();
            text.push_str(&schema.date_column);
            for f in &fields {
                text.push(',');
                text.push_str(&schema.behavior_columns[f]);
            }
            text.push('\n');
            for day in &p.behavior {
                text.push_str(&day.date.to_string());
                for f in &fields {
                    text.push(',');
                    if let Some(v) = day.get(*f) {
                        text.push_str(&fmt_exact(v));
                    }
                }
                text.push('\n');
            }
            let path = dir.join(&schema.behavior_file);
            fs::write(&path, text).map_err(io(&path))?;

            let mut text = String::new();
            let names: Vec<IndicatorName> = IndicatorName::ALL
                .into_iter()
                .filter(|n| schema.record_columns.contains_key(n))
                .collect();
            text.push_str(&schema.date_column);
            for n in &names {
                text.push(',');
                text.push_str(&schema.record_columns[n]);
            }
            text.push('\n');
            for entry in &p.records {
                text.push_str(&entry.date.to_string());
                for n in &names {
                    text.push(',');
                    if let Some(v) = entry.get(*n) {
                        text.push_str(&fmt_exact(v));
                    }
                }
                text.push('\n');
            }
            let path = dir.join(&schema.record_file);
            fs::write(&path, text).map_err(io(&path))?;

            let portrait = &p.portrait;
            if !portrait.age_band.is_empty()
                || !portrait.gender.is_empty()
                || !portrait.traits.is_empty()
            {
                let path = dir.join(PORTRAIT_FILE);
                let json = serde_json::to_string_pretty(portrait).expect("portrait serializes");
                fs::write(&path, json + "\n").map_err(io(&path))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) {
        fs::create_dir_all(dir).unwrap();
        fs::write(dir.join(name), text).unwrap();
    }

    #[test]
    fn missing_directory_is_fatal() {
        let err = parse_pmdata(Path::new("/definitely/not/here")).unwrap_err();
        assert!(matches!(err, CohortError::MissingDirectory(_)));
    }

    #[test]
    fn empty_directory_gives_empty_cohort() {
        let tmp = tempfile::tempdir().unwrap();
        let cohort = parse_pmdata(tmp.path()).unwrap();
        assert!(cohort.participants.is_empty());
        assert!(cohort.report.is_clean());
    }

    #[test]
    fn negative_steps_row_is_rejected_but_participant_kept() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("p01");
        write(
            &p,
            "daily.csv",
            "date,steps,calories_in,calories_burned,exercise_minutes,sleep_minutes,resting_hr\n\
             2024-01-01,1000,2000,2300,30,420,60\n\
             2024-01-02,-5,2000,2300,30,420,60\n\
             2024-01-03,1200,,2300,30,410,61\n",
        );
        let cohort = parse_pmdata(tmp.path()).unwrap();
        assert_eq!(cohort.participants.len(), 1);
        assert_eq!(cohort.participants[0].behavior.len(), 2);
        assert_eq!(cohort.report.rejected_rows.len(), 1);
        let rej = &cohort.report.rejected_rows[0];
        assert_eq!(rej.line, 3);
        assert!(rej.reason.contains("steps"), "{}", rej.reason);
        // absent stays absent
        assert_eq!(cohort.participants[0].behavior[1].calories_in, None);
    }

    #[test]
    fn bad_header_is_a_file_error_with_path() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("p01");
        write(&p, "daily.csv", "day,steps\n2024-01-01,5\n");
        let cohort = parse_pmdata(tmp.path()).unwrap();
        assert_eq!(cohort.report.file_errors.len(), 1);
        assert!(cohort.report.file_errors[0].path.ends_with("daily.csv"));
    }

    #[test]
    fn duplicate_dates_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("p01");
        write(
            &p,
            "wellness.csv",
            "date,fatigue,mood,stress,sleep_quality,readiness\n\
             2024-01-01,3,3,3,3,3\n2024-01-01,2,2,2,2,2\n",
        );
        let cohort = parse_pmdata(tmp.path()).unwrap();
        assert_eq!(cohort.participants[0].records.len(), 1);
        assert_eq!(cohort.report.rejected_rows.len(), 1);
    }

    #[test]
    fn globem_out_of_scale_survey_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("g01");
        write(
            &p,
            "surveys.csv",
            "date,phq4,pss4,panas_pos,panas_neg\n2024-01-01,13,5,15,10\n2024-01-08,6,5,15,10\n",
        );
        let cohort = parse_globem(tmp.path()).unwrap();
        assert_eq!(cohort.participants[0].records.len(), 1);
        assert_eq!(cohort.report.rejected_rows.len(), 1);
        assert!(cohort.report.rejected_rows[0].reason.contains("phq4"));
    }

    #[test]
    fn mapping_file_renames_columns() {
        let tmp = tempfile::tempdir().unwrap();
        let mut schema = DatasetSchema::pmdata();
        schema
            .behavior_columns
            .insert(BehaviorField::Steps, "step_count".into());
        fs::write(
            tmp.path().join(SCHEMA_FILE),
            serde_json::to_string(&schema).unwrap(),
        )
        .unwrap();
        write(
            &tmp.path().join("p01"),
            "daily.csv",
            "date,step_count\n2024-01-01,4321\n",
        );
        let cohort = parse_pmdata(tmp.path()).unwrap();
        assert_eq!(cohort.participants[0].behavior[0].steps, Some(4321.0));
    }
}

//! Note ingestion, cohort construction and text preprocessing.

pub mod cohort;
pub mod ingest;
pub mod records;
pub mod split;
pub mod synth;
pub mod text;
pub mod vocab;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

pub use cohort::{derive_labels, filter_cohort, Cohort};
pub use ingest::{ingest_admissions, ingest_notes, Ingested, Rejection};
pub use records::{build_documents, Document, PatientRecord, Sentence, TokenizedSentence, Truncation};
pub use split::{split_patients, subsample_negatives, CohortSplit, SplitRatios};
pub use synth::{generate_synthetic, SignalSpec, SyntheticConfig, SyntheticCorpus};
pub use text::segment_and_tokenize;
pub use vocab::{build_vocabulary, Vocabulary};

/// Note categories seen by the model. Discharge summaries are a fifteenth
/// category on input but never survive cohort filtering.
pub const CATEGORIES: [&str; 14] = [
    "case management",
    "consult",
    "ecg",
    "echo",
    "general",
    "nursing",
    "nursing/other",
    "nutrition",
    "pharmacy",
    "physician",
    "radiology",
    "rehab services",
    "respiratory",
    "social work",
];

pub const DISCHARGE_SUMMARY: &str = "discharge summary";

/// Canonical (lowercase, trimmed) form of a category name, if it is known.
pub fn normalize_category(name: &str) -> Option<String> {
    let norm = name.trim().to_lowercase();
    (norm == DISCHARGE_SUMMARY || CATEGORIES.contains(&norm.as_str())).then_some(norm)
}

/// Model-side category index; `None` for discharge summaries and unknowns.
pub fn category_id(name: &str) -> Option<usize> {
    CATEGORIES.iter().position(|&c| c == name)
}

pub const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Accepts `YYYY-MM-DDTHH:MM:SS`, the same with a space separator, or a bare
/// date (midnight).
pub fn parse_time(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    NaiveDateTime::parse_from_str(s, TIME_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .ok()
        .or_else(|| {
            chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

pub fn format_time(t: &NaiveDateTime) -> String {
    t.format(TIME_FORMAT).to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawNote {
    pub patient_id: String,
    pub category: String,
    pub chart_time: NaiveDateTime,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionMeta {
    pub patient_id: String,
    pub age: f64,
    pub n_admissions: u32,
    pub admit_time: NaiveDateTime,
    pub discharge_time: NaiveDateTime,
    pub death_time: Option<NaiveDateTime>,
    pub died_in_hospital: bool,
}

/// Mortality labels. Post-discharge labels are `None` for in-hospital deaths,
/// which are excluded from those tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskLabels {
    pub in_hospital: bool,
    pub post_30d: Option<bool>,
    pub post_1y: Option<bool>,
}

/// The three prediction tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "hospital")]
    Hospital,
    #[serde(rename = "30-day")]
    Day30,
    #[serde(rename = "1-year")]
    Year1,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Hospital, Task::Day30, Task::Year1];

    pub fn name(self) -> &'static str {
        match self {
            Task::Hospital => "hospital",
            Task::Day30 => "30-day",
            Task::Year1 => "1-year",
        }
    }

    /// The label for this task, or `None` if the patient is excluded from it.
    pub fn label(self, labels: &TaskLabels) -> Option<bool> {
        match self {
            Task::Hospital => Some(labels.in_hospital),
            Task::Day30 => labels.post_30d,
            Task::Year1 => labels.post_1y,
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Task {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "hospital" | "in-hospital" | "in_hospital" => Ok(Task::Hospital),
            "30-day" | "30d" | "30day" | "post_30d" => Ok(Task::Day30),
            "1-year" | "1y" | "1year" | "post_1y" => Ok(Task::Year1),
            other => Err(crate::Error::InvalidArgument(format!(
                "unknown task `{other}` (expected hospital, 30-day or 1-year)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_set_has_fourteen_model_categories() {
        assert_eq!(CATEGORIES.len(), 14);
        assert_eq!(normalize_category(" Nursing "), Some("nursing".into()));
        assert_eq!(normalize_category("Discharge Summary"), Some(DISCHARGE_SUMMARY.into()));
        assert_eq!(normalize_category("astrology"), None);
        assert_eq!(category_id(DISCHARGE_SUMMARY), None);
    }

    #[test]
    fn time_formats() {
        let a = parse_time("2130-04-01T08:30:00").unwrap();
        assert_eq!(parse_time("2130-04-01 08:30:00"), Some(a));
        assert_eq!(format_time(&a), "2130-04-01T08:30:00");
        assert!(parse_time("2130-04-01").is_some());
        assert!(parse_time("yesterday").is_none());
    }

    #[test]
    fn task_parsing() {
        assert_eq!("30-day".parse::<Task>().unwrap(), Task::Day30);
        assert_eq!("Hospital".parse::<Task>().unwrap(), Task::Hospital);
        assert!("5-year".parse::<Task>().is_err());
    }
}

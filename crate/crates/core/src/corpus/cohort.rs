//! Cohort selection and mortality label derivation.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::Duration;

use super::{AdmissionMeta, RawNote, TaskLabels, DISCHARGE_SUMMARY};
use crate::{Error, Result};

pub const MIN_AGE: f64 = 18.0;
pub const POST_30D_DAYS: i64 = 30;
pub const POST_1Y_DAYS: i64 = 365;

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    /// Sorted, unique.
    pub patient_ids: Vec<String>,
    /// Retained notes in input order.
    pub notes: Vec<RawNote>,
}

/// Keeps adults with a single admission, drops discharge summaries and any
/// note charted after discharge, then drops patients left without notes.
pub fn filter_cohort(notes: &[RawNote], admissions: &[AdmissionMeta]) -> Cohort {
    let eligible: HashMap<&str, &AdmissionMeta> = admissions
        .iter()
        .filter(|a| a.age >= MIN_AGE && a.n_admissions == 1)
        .map(|a| (a.patient_id.as_str(), a))
        .collect();

    let retained: Vec<RawNote> = notes
        .iter()
        .filter(|n| {
            eligible.get(n.patient_id.as_str()).is_some_and(|a| {
                n.category != DISCHARGE_SUMMARY && n.chart_time <= a.discharge_time
            })
        })
        .cloned()
        .collect();

    let patient_ids: BTreeSet<&str> = retained.iter().map(|n| n.patient_id.as_str()).collect();
    Cohort {
        patient_ids: patient_ids.into_iter().map(str::to_owned).collect(),
        notes: retained,
    }
}

/// Derives per-patient labels. Deaths within the post-discharge windows are
/// counted with inclusive bounds; in-hospital deaths get no post-discharge
/// labels.
pub fn derive_labels(admissions: &[AdmissionMeta]) -> Result<BTreeMap<String, TaskLabels>> {
    admissions
        .iter()
        .map(|a| Ok((a.patient_id.clone(), labels_for(a)?)))
        .collect()
}

pub fn labels_for(a: &AdmissionMeta) -> Result<TaskLabels> {
    if let Some(d) = a.death_time {
        if d < a.admit_time {
            return Err(Error::Data(format!(
                "patient {}: death_time precedes admit_time",
                a.patient_id
            )));
        }
    }
    if a.died_in_hospital {
        return Ok(TaskLabels {
            in_hospital: true,
            post_30d: None,
            post_1y: None,
        });
    }
    let (post_30d, post_1y) = match a.death_time {
        None => (false, false),
        Some(d) => {
            if d < a.discharge_time {
                return Err(Error::Data(format!(
                    "patient {}: death before discharge but not marked as an in-hospital death",
                    a.patient_id
                )));
            }
            let after = d - a.discharge_time;
            (
                after <= Duration::days(POST_30D_DAYS),
                after <= Duration::days(POST_1Y_DAYS),
            )
        }
    };
    Ok(TaskLabels {
        in_hospital: false,
        post_30d: Some(post_30d),
        post_1y: Some(post_1y),
    })
}

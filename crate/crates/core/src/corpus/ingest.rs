//! Newline-delimited JSON ingestion of notes and admissions.
//!
//! Each line is a flat object. Malformed lines are rejected individually
//! with a reason; only an unreadable source is a hard error.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde_json::{Map, Value};

use super::{normalize_category, parse_time, AdmissionMeta, RawNote};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested<T> {
    pub records: Vec<T>,
    pub rejections: Vec<Rejection>,
}

fn ingest<R, T, F>(reader: R, origin: &Path, parse: F) -> Result<Ingested<T>>
where
    R: BufRead,
    F: Fn(&Map<String, Value>) -> std::result::Result<T, String>,
{
    let mut records = Vec::new();
    let mut rejections = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(obj)) => parse(&obj),
            Ok(_) => Err("record is not an object".to_string()),
            Err(e) => Err(format!("invalid JSON: {e}")),
        };
        match parsed {
            Ok(r) => records.push(r),
            Err(reason) => rejections.push(Rejection { line: i + 1, reason }),
        }
    }
    Ok(Ingested {
        records,
        rejections,
    })
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> std::result::Result<&'a Value, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Err(format!("missing field `{key}`")),
        Some(v) => Ok(v),
    }
}

fn string(obj: &Map<String, Value>, key: &str) -> std::result::Result<String, String> {
    match field(obj, key)? {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(format!("field `{key}` is not a string")),
    }
}

fn number(obj: &Map<String, Value>, key: &str) -> std::result::Result<f64, String> {
    match field(obj, key)? {
        Value::Number(n) => n.as_f64().ok_or_else(|| format!("field `{key}` out of range")),
        Value::String(s) => s
            .trim()
            .parse()
            .map_err(|_| format!("field `{key}` is not a number")),
        _ => Err(format!("field `{key}` is not a number")),
    }
}

fn boolean(obj: &Map<String, Value>, key: &str) -> std::result::Result<bool, String> {
    match field(obj, key)? {
        Value::Bool(b) => Ok(*b),
        Value::Number(n) if n.as_u64() == Some(0) => Ok(false),
        Value::Number(n) if n.as_u64() == Some(1) => Ok(true),
        Value::String(s) => match s.trim().to_lowercase().as_str() {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            _ => Err(format!("field `{key}` is not a boolean")),
        },
        _ => Err(format!("field `{key}` is not a boolean")),
    }
}

fn time(obj: &Map<String, Value>, key: &str) -> std::result::Result<chrono::NaiveDateTime, String> {
    let s = string(obj, key)?;
    parse_time(&s).ok_or_else(|| format!("field `{key}` is not an ISO-8601 timestamp: {s:?}"))
}

fn parse_note(obj: &Map<String, Value>) -> std::result::Result<RawNote, String> {
    let patient_id = string(obj, "patient_id")?;
    let raw_category = string(obj, "category")?;
    let category = normalize_category(&raw_category)
        .ok_or_else(|| format!("unknown category {raw_category:?}"))?;
    let chart_time = time(obj, "chart_time")?;
    let text = string(obj, "text")?;
    if text.trim().is_empty() {
        return Err("field `text` is empty".into());
    }
    Ok(RawNote {
        patient_id,
        category,
        chart_time,
        text,
    })
}

fn parse_admission(obj: &Map<String, Value>) -> std::result::Result<AdmissionMeta, String> {
    let patient_id = string(obj, "patient_id")?;
    let age = number(obj, "age")?;
    let n = number(obj, "n_admissions")?;
    if n < 1.0 || n.fract() != 0.0 {
        return Err(format!("field `n_admissions` must be a positive integer, got {n}"));
    }
    let admit_time = time(obj, "admit_time")?;
    let discharge_time = time(obj, "discharge_time")?;
    if discharge_time < admit_time {
        return Err("discharge_time precedes admit_time".into());
    }
    let death_time = match obj.get("death_time") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) if s.trim().is_empty() => None,
        Some(_) => Some(time(obj, "death_time")?),
    };
    let died_in_hospital = boolean(obj, "died_in_hospital")?;
    if let (true, Some(d)) = (died_in_hospital, death_time) {
        if d < admit_time || d > discharge_time {
            return Err("in-hospital death_time outside the admission window".into());
        }
    }
    Ok(AdmissionMeta {
        patient_id,
        age,
        n_admissions: n as u32,
        admit_time,
        discharge_time,
        death_time,
        died_in_hospital,
    })
}

/// Parses note records; `origin` only labels I/O errors.
pub fn ingest_notes<R: BufRead>(reader: R, origin: &Path) -> Result<Ingested<RawNote>> {
    ingest(reader, origin, parse_note)
}

pub fn ingest_admissions<R: BufRead>(reader: R, origin: &Path) -> Result<Ingested<AdmissionMeta>> {
    ingest(reader, origin, parse_admission)
}

pub fn read_notes(path: &Path) -> Result<Ingested<RawNote>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_notes(BufReader::new(f), path)
}

pub fn read_admissions(path: &Path) -> Result<Ingested<AdmissionMeta>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_admissions(BufReader::new(f), path)
}

pub fn note_to_json(note: &RawNote) -> String {
    serde_json::json!({
        "patient_id": note.patient_id,
        "category": note.category,
        "chart_time": super::format_time(&note.chart_time),
        "text": note.text,
    })
    .to_string()
}

pub fn admission_to_json(a: &AdmissionMeta) -> String {
    let mut obj = serde_json::json!({
        "patient_id": a.patient_id,
        "age": a.age,
        "n_admissions": a.n_admissions,
        "admit_time": super::format_time(&a.admit_time),
        "discharge_time": super::format_time(&a.discharge_time),
        "died_in_hospital": a.died_in_hospital,
    });
    if let Some(d) = &a.death_time {
        obj["death_time"] = Value::String(super::format_time(d));
    }
    obj.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn notes(src: &str) -> Ingested<RawNote> {
        ingest_notes(src.as_bytes(), Path::new("<test>")).unwrap()
    }

    #[test]
    fn empty_source() {
        let got = notes("");
        assert!(got.records.is_empty());
        assert!(got.rejections.is_empty());
    }

    #[test]
    fn single_note() {
        let got = notes(
            r#"{"patient_id":"p1","category":"Nursing","chart_time":"2130-01-01T10:00:00","text":"no effusion ."}"#,
        );
        assert_eq!(got.records.len(), 1);
        assert_eq!(got.records[0].category, "nursing");
    }

    #[test]
    fn rejections_carry_reasons() {
        let got = notes(concat!(
            r#"{"patient_id":"p1","category":"nursing","chart_time":"2130-01-01T10:00:00"}"#,
            "\n",
            r#"{"patient_id":"p1","category":"tarot","chart_time":"2130-01-01T10:00:00","text":"x"}"#,
            "\n",
            r#"{"patient_id":"p1","category":"nursing","chart_time":"soon","text":"x"}"#,
            "\n",
            "not json\n",
            r#"{"patient_id":"p1","category":"nursing","chart_time":"2130-01-01T10:00:00","text":"   "}"#,
        ));
        assert!(got.records.is_empty());
        let reasons: Vec<_> = got.rejections.iter().map(|r| r.reason.as_str()).collect();
        assert!(reasons[0].contains("`text`"));
        assert!(reasons[1].contains("category"));
        assert!(reasons[2].contains("chart_time"));
        assert!(reasons[3].contains("JSON"));
        assert!(reasons[4].contains("empty"));
        assert_eq!(got.rejections[3].line, 4);
    }

    #[test]
    fn admissions_roundtrip_through_json() {
        let src = r#"{"patient_id":"p9","age":67,"n_admissions":1,"admit_time":"2130-01-01T00:00:00","discharge_time":"2130-01-05T00:00:00","death_time":"2130-01-20T00:00:00","died_in_hospital":false}"#;
        let got = ingest_admissions(src.as_bytes(), Path::new("<test>")).unwrap();
        assert_eq!(got.records.len(), 1);
        let again = ingest_admissions(
            admission_to_json(&got.records[0]).as_bytes(),
            Path::new("<test>"),
        )
        .unwrap();
        assert_eq!(again.records, got.records);
    }

    #[test]
    fn admission_with_inverted_window_is_rejected() {
        let src = r#"{"patient_id":"p9","age":67,"n_admissions":1,"admit_time":"2130-01-05T00:00:00","discharge_time":"2130-01-01T00:00:00","died_in_hospital":false}"#;
        let got = ingest_admissions(src.as_bytes(), Path::new("<test>")).unwrap();
        assert_eq!(got.rejections.len(), 1);
    }
}

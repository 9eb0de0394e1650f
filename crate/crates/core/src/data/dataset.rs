use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Arc, Record, Token};
use crate::{Error, Result};

/// Records that loaded, plus per-line failures in lenient mode.
#[derive(Debug, Default)]
pub struct LoadReport {
    pub records: Vec<Record>,
    pub errors: Vec<RecordError>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordError {
    pub line: usize,
    pub id: Option<String>,
    pub message: String,
}

impl std::fmt::Display for RecordError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.id {
            Some(id) => write!(f, "line {}: record {id}: {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    tokens: Vec<String>,
    arcs: Vec<(i64, i64, String)>,
    genres: Vec<String>,
    label: Option<i64>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    id: &'a str,
    tokens: Vec<&'a str>,
    arcs: Vec<(usize, usize, &'a str)>,
    genres: &'a [String],
    label: u8,
}

fn convert(raw: RawRecord, require_label: bool) -> Result<Record> {
    let bad = |message: String| Error::Record { id: raw.id.clone(), message };
    let label = match raw.label {
        Some(l) if (0..=1).contains(&l) => l as u8,
        Some(l) => return Err(bad(format!("label {l} outside {{0, 1}}"))),
        None if require_label => return Err(bad("missing field `label`".into())),
        None => 0,
    };
    let mut arcs = Vec::with_capacity(raw.arcs.len());
    for (h, d, rel) in &raw.arcs {
        if *h < 0 || *d < 0 {
            return Err(bad(format!("negative arc index in ({h}, {d})")));
        }
        arcs.push(Arc::new(*h as usize, *d as usize, rel.as_str()));
    }
    let mut genres: Vec<String> = Vec::with_capacity(raw.genres.len());
    for g in &raw.genres {
        if !genres.contains(g) {
            genres.push(g.clone());
        }
    }
    let record = Record { tokens: raw.tokens.iter().map(Token::new).collect(), arcs, genres, label, id: raw.id };
    record.validate()?;
    Ok(record)
}

fn parse_line(line: &str, require_label: bool) -> std::result::Result<Record, (Option<String>, String)> {
    let value: Value = serde_json::from_str(line).map_err(|e| (None, e.to_string()))?;
    let id = value.get("id").and_then(Value::as_str).map(str::to_owned);
    let raw: RawRecord = serde_json::from_value(value).map_err(|e| (id.clone(), e.to_string()))?;
    convert(raw, require_label).map_err(|e| match e {
        Error::Record { id, message } => (Some(id), message),
        other => (id, other.to_string()),
    })
}

/// Parses line-delimited JSON records. Blank lines are skipped and unknown
/// fields ignored. In strict mode the first bad record is an error;
/// otherwise bad records are collected in [`LoadReport::errors`].
pub fn parse_dataset(text: &str, strict: bool) -> Result<LoadReport> {
    parse_records(text, strict, true)
}

/// Like [`parse_dataset`], but a missing `label` reads as 0. For inference
/// on unlabeled data.
pub fn parse_unlabeled(text: &str, strict: bool) -> Result<LoadReport> {
    parse_records(text, strict, false)
}

fn parse_records(text: &str, strict: bool, require_label: bool) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line, require_label) {
            Ok(r) => report.records.push(r),
            Err((id, message)) => {
                let err = RecordError { line: idx + 1, id, message };
                if strict {
                    return Err(match err.id {
                        Some(id) => Error::Record { id, message: err.message },
                        None => Error::Parse { line: err.line, message: err.message },
                    });
                }
                report.errors.push(err);
            }
        }
    }
    Ok(report)
}

pub fn load_dataset(path: impl AsRef<Path>, strict: bool) -> Result<LoadReport> {
    parse_dataset(&read(path.as_ref())?, strict)
}

pub fn load_unlabeled(path: impl AsRef<Path>, strict: bool) -> Result<LoadReport> {
    parse_unlabeled(&read(path.as_ref())?, strict)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// One record as a single JSON line (no trailing newline).
pub fn record_to_json(record: &Record) -> String {
    let out = OutRecord {
        id: &record.id,
        tokens: record.tokens.iter().map(|t| t.surface.as_str()).collect(),
        arcs: record.arcs.iter().map(|a| (a.head, a.dependent, a.relation.as_str())).collect(),
        genres: &record.genres,
        label: record.label,
    };
    serde_json::to_string(&out).expect("records always serialize")
}

pub fn write_dataset(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for r in records {
        text.push_str(&record_to_json(r));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"id":"r1","tokens":["It","'s","killing","me"],"arcs":[[3,1,"nsubj"],[3,2,"aux"],[0,3,"root"],[3,4,"dobj"]],"genres":["romance"],"label":0,"extra":true}"#;

    #[test]
    fn well_formed_record() {
        let report = parse_dataset(GOOD, true).unwrap();
        assert_eq!(report.records.len(), 1);
        let r = &report.records[0];
        assert_eq!(r.id, "r1");
        assert_eq!(r.tokens[2].normalized, "killing");
        assert_eq!(r.arcs[3], Arc::new(3, 4, "dobj"));
        assert_eq!(r.genres, vec!["romance"]);
        assert_eq!(parse_dataset(&record_to_json(r), true).unwrap().records[0], *r);
    }

    #[test]
    fn bad_label_rejected_with_id() {
        let line = GOOD.replace(r#""label":0"#, r#""label":2"#);
        match parse_dataset(&line, true) {
            Err(Error::Record { id, message }) => {
                assert_eq!(id, "r1");
                assert!(message.contains("label"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_field_and_bad_arcs() {
        let no_genres = r#"{"id":"x","tokens":["a"],"arcs":[],"label":1}"#;
        let err = parse_dataset(no_genres, true).unwrap_err().to_string();
        assert!(err.contains("x") && err.contains("genres"), "{err}");
        let out_of_range = r#"{"id":"y","tokens":["a","b"],"arcs":[[1,3,"dep"]],"genres":[],"label":1}"#;
        assert!(matches!(parse_dataset(out_of_range, true), Err(Error::Record { .. })));
        let two_heads = r#"{"id":"z","tokens":["a","b"],"arcs":[[1,2,"dep"],[0,2,"root"]],"genres":[],"label":1}"#;
        assert!(matches!(parse_dataset(two_heads, true), Err(Error::Record { .. })));
    }

    #[test]
    fn lenient_mode_collects_errors() {
        let mut lines = Vec::new();
        for i in 0..1000 {
            let line = GOOD.replace(r#""id":"r1""#, &format!(r#""id":"r{i}""#));
            lines.push(match i {
                10 => line.replace(r#""label":0"#, r#""label":5"#),
                500 => "{not json".to_string(),
                998 => line.replace("[3,4,\"dobj\"]", "[3,9,\"dobj\"]"),
                _ => line,
            });
        }
        let report = parse_dataset(&lines.join("\n"), false).unwrap();
        assert_eq!(report.records.len(), 997);
        assert_eq!(report.errors.len(), 3);
        assert_eq!(report.errors[0].id.as_deref(), Some("r10"));
        assert_eq!(report.errors[1].line, 501);
        assert_eq!(report.errors[1].id, None);
        assert_eq!(report.errors[2].id.as_deref(), Some("r998"));
    }

    #[test]
    fn label_optional_only_for_inference() {
        let line = GOOD.replace(r#","label":0"#, "");
        let err = parse_dataset(&line, true).unwrap_err().to_string();
        assert!(err.contains("label"), "{err}");
        assert_eq!(parse_unlabeled(&line, true).unwrap().records[0].label, 0);
        let bad = GOOD.replace(r#""label":0"#, r#""label":-1"#);
        assert!(parse_unlabeled(&bad, true).is_err());
    }
}

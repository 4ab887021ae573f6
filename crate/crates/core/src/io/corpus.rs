//! JSONL corpus reader.
//!
//! One JSON object per line, using the Webis Clickbait-17 field names:
//!
//! | field               | type                      | required |
//! |---------------------|---------------------------|----------|
//! | `id`                | string or integer         | yes      |
//! | `postText`          | string or array of string | yes      |
//! | `targetTitle`       | string                    | yes      |
//! | `targetDescription` | string                    | yes      |
//! | `targetKeywords`    | comma-separated string or array of string | no |
//! | `postMedia`         | array of string (first entry is the image id) | no |
//! | `imageId`           | string (overrides `postMedia`) | no |
//! | `label`             | 0 or 1                    | no       |
//! | `truthMean`         | number in [0, 1]          | no       |
//! | `truthClass`        | `"clickbait"` / `"no-clickbait"` | no |
//!
//! The label is taken from `label` if present, else `truthMean` (≥ 0.5 is
//! clickbait), else `truthClass`. Blank lines are ignored.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use crate::embeddings::tokenize;
use crate::Result;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PostRecord {
    pub id: String,
    pub post_title_tokens: Vec<String>,
    pub target_title: String,
    pub target_description: String,
    pub target_keywords: Vec<String>,
    pub image_id: Option<String>,
    /// 1 = clickbait.
    pub label: Option<u8>,
    /// Graded annotation mean, when the corpus carries one.
    pub truth_mean: Option<f64>,
}

/// Key of the post-title vector in a document embedding table.
pub fn title_doc_id(record_id: &str) -> String {
    format!("{record_id}/title")
}

/// Key of the target-description vector in a document embedding table.
pub fn description_doc_id(record_id: &str) -> String {
    format!("{record_id}/description")
}

#[derive(Clone, Debug, PartialEq)]
pub enum LineErrorKind {
    Malformed(String),
    MissingField(&'static str),
    InvalidField { field: &'static str, reason: String },
    DuplicateId(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub kind: LineErrorKind,
}

impl std::fmt::Display for LineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.kind {
            LineErrorKind::Malformed(e) => write!(f, "line {}: malformed JSON: {e}", self.line),
            LineErrorKind::MissingField(name) => {
                write!(f, "line {}: missing field {name}", self.line)
            }
            LineErrorKind::InvalidField { field, reason } => {
                write!(f, "line {}: invalid {field}: {reason}", self.line)
            }
            LineErrorKind::DuplicateId(id) => write!(f, "line {}: duplicate id {id}", self.line),
        }
    }
}

/// Parsed records in file order, plus every rejected line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub records: Vec<PostRecord>,
    pub errors: Vec<LineError>,
}

impl Corpus {
    pub fn parse(text: &str) -> Self {
        let mut corpus = Corpus::default();
        let mut ids = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = i + 1;
            let parsed = serde_json::from_str::<Value>(line)
                .map_err(|e| LineErrorKind::Malformed(e.to_string()))
                .and_then(|v| match v {
                    Value::Object(map) => parse_record(&map),
                    _ => Err(LineErrorKind::Malformed("expected a JSON object".into())),
                });
            match parsed {
                Ok(record) if !ids.insert(record.id.clone()) => corpus.errors.push(LineError {
                    line: line_no,
                    kind: LineErrorKind::DuplicateId(record.id),
                }),
                Ok(record) => corpus.records.push(record),
                Err(kind) => corpus.errors.push(LineError {
                    line: line_no,
                    kind,
                }),
            }
        }
        corpus
    }
}

pub fn parse_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    Ok(Corpus::parse(&fs::read_to_string(path)?))
}

fn parse_record(map: &Map<String, Value>) -> Result<PostRecord, LineErrorKind> {
    let id = match map.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(_) => return Err(invalid("id", "expected string or integer")),
        None => return Err(LineErrorKind::MissingField("id")),
    };
    let post_text = text_or_list(map, "postText")?
        .ok_or(LineErrorKind::MissingField("postText"))?
        .join(" ");
    let target_title =
        string_field(map, "targetTitle")?.ok_or(LineErrorKind::MissingField("targetTitle"))?;
    let target_description = string_field(map, "targetDescription")?
        .ok_or(LineErrorKind::MissingField("targetDescription"))?;
    let target_keywords = match map.get("targetKeywords") {
        Some(Value::String(s)) => s
            .split(',')
            .map(str::trim)
            .filter(|k| !k.is_empty())
            .map(str::to_owned)
            .collect(),
        _ => text_or_list(map, "targetKeywords")?.unwrap_or_default(),
    };
    let image_id = match string_field(map, "imageId")? {
        Some(id) => Some(id),
        None => text_or_list(map, "postMedia")?.and_then(|m| m.into_iter().next()),
    };

    let truth_mean = match map.get("truthMean") {
        None | Some(Value::Null) => None,
        Some(v) => match v.as_f64() {
            Some(m) if (0.0..=1.0).contains(&m) => Some(m),
            _ => return Err(invalid("truthMean", "expected a number in [0, 1]")),
        },
    };
    let label = match map.get("label") {
        None | Some(Value::Null) => None,
        Some(v) => match v.as_f64() {
            Some(l) if l == 0.0 || l == 1.0 => Some(l as u8),
            _ => return Err(invalid("label", "expected 0 or 1")),
        },
    };
    let class = match string_field(map, "truthClass")?.as_deref() {
        None => None,
        Some("clickbait") => Some(1),
        Some("no-clickbait") => Some(0),
        Some(other) => return Err(invalid("truthClass", other)),
    };
    let label = label
        .or_else(|| truth_mean.map(|m| u8::from(m >= 0.5)))
        .or(class);

    Ok(PostRecord {
        id,
        post_title_tokens: tokenize(&post_text),
        target_title,
        target_description,
        target_keywords,
        image_id,
        label,
        truth_mean,
    })
}

fn invalid(field: &'static str, reason: &str) -> LineErrorKind {
    LineErrorKind::InvalidField {
        field,
        reason: reason.to_owned(),
    }
}

fn string_field(
    map: &Map<String, Value>,
    field: &'static str,
) -> Result<Option<String>, LineErrorKind> {
    match map.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(invalid(field, "expected a string")),
    }
}

fn text_or_list(
    map: &Map<String, Value>,
    field: &'static str,
) -> Result<Option<Vec<String>>, LineErrorKind> {
    match map.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(vec![s.clone()])),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_owned)
                    .ok_or_else(|| invalid(field, "expected strings"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some),
        Some(_) => Err(invalid(field, "expected a string or an array of strings")),
    }
}

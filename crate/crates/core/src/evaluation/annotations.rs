//! Annotation files.
//!
//! Tab-separated, one record per line:
//!
//! ```text
//! task	sample_id	aspect	annotator_id	vote	missing_count
//! poem	s01	coherence	a1	yes
//! poem	s01	knowledge_absorption	a1		0
//! ```
//!
//! The header line is optional and `#` starts a comment line. A file whose
//! first record starts with `{` is read as JSON lines instead, one
//! [`AnnotationRecord`] object per line.
#![allow(clippy::tabs_in_doc_comments)]

use super::{AnnotationRecord, EvalError};

const HEADER: &str = "task";

fn parse_error(line: u64, message: impl Into<String>) -> EvalError {
    EvalError::Parse {
        line,
        message: message.into(),
    }
}

pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>, EvalError> {
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'));
    match first {
        None => Ok(Vec::new()),
        Some(l) if l.starts_with('{') => parse_jsonl(text),
        Some(_) => parse_tsv(text),
    }
}

fn parse_jsonl(text: &str) -> Result<Vec<AnnotationRecord>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_error(i as u64 + 1, e.to_string())))
        .collect()
}

fn parse_tsv(text: &str) -> Result<Vec<AnnotationRecord>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .quoting(false)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.iter().all(str::is_empty) || (records.is_empty() && row.get(0) == Some(HEADER)) {
            continue;
        }
        if !(5..=6).contains(&row.len()) {
            return Err(parse_error(
                line,
                format!("expected 5 or 6 fields, found {}", row.len()),
            ));
        }
        let field = |i: usize| row.get(i).unwrap_or("");
        let aspect = field(2).parse().map_err(|e: String| parse_error(line, e))?;
        let vote = match field(4) {
            "" => None,
            v => Some(v.parse().map_err(|e: String| parse_error(line, e))?),
        };
        let missing_count = match field(5) {
            "" => None,
            m => Some(
                m.parse()
                    .map_err(|_| parse_error(line, format!("missing_count `{m}` is not a nonnegative integer")))?,
            ),
        };
        records.push(AnnotationRecord {
            task_name: field(0).to_string(),
            sample_id: field(1).to_string(),
            aspect,
            annotator_id: field(3).to_string(),
            vote,
            missing_count,
        });
    }
    Ok(records)
}

/// One JSON line per record, newline-terminated.
pub fn to_jsonl(records: &[AnnotationRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records always serialize") + "\n")
        .collect()
}

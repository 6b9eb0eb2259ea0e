//! Line-delimited JSON datasets of pre-retrieved evidence.
//!
//! Each non-blank line is `{"id": .., "question": .., "answers": [..], "documents": [..]}`.

use std::collections::HashSet;
use std::path::Path;

use log::warn;
use thiserror::Error;

use crate::types::EvidenceBundle;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
}

#[derive(Debug, Default)]
pub struct IngestOutcome {
    pub bundles: Vec<EvidenceBundle>,
    /// Lines skipped in lenient mode, with the reason.
    pub skipped: Vec<(usize, String)>,
}

fn check_bundle(b: &EvidenceBundle) -> Result<(), String> {
    if b.id.is_empty() {
        return Err("empty id".into());
    }
    if b.gold_answers.is_empty() {
        return Err("answers must be non-empty".into());
    }
    if b.documents.is_empty() {
        return Err("documents must be non-empty".into());
    }
    Ok(())
}

/// Parses a dataset. With `strict`, the first malformed line is an error;
/// otherwise it is logged and skipped. Duplicate ids are always an error.
pub fn parse_dataset(text: &str, strict: bool) -> Result<IngestOutcome, IngestError> {
    let mut out = IngestOutcome::default();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<EvidenceBundle>(line)
            .map_err(|e| e.to_string())
            .and_then(|b| check_bundle(&b).map(|_| b));
        let bundle = match parsed {
            Ok(b) => b,
            Err(message) if strict => {
                return Err(IngestError::Malformed {
                    line: line_no,
                    message,
                })
            }
            Err(message) => {
                warn!("skipping line {line_no}: {message}");
                out.skipped.push((line_no, message));
                continue;
            }
        };
        if !seen.insert(bundle.id.clone()) {
            return Err(IngestError::DuplicateId {
                line: line_no,
                id: bundle.id,
            });
        }
        out.bundles.push(bundle);
    }
    Ok(out)
}

pub fn ingest(path: &Path, strict: bool) -> Result<IngestOutcome, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_dataset(&text, strict)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"id":"1","question":"q1","answers":["a"],"documents":["d1","d2","d3","d4","d5"]}
{"id":"2","question":"q2","answers":["b","bb"],"documents":["x"]}

{"id":"3","question":"q3","answers":["c"],"documents":["y"]}
"#;

    #[test]
    fn three_good_lines() {
        let out = parse_dataset(GOOD, true).unwrap();
        assert_eq!(out.bundles.len(), 3);
        assert_eq!(out.bundles[0].documents.len(), 5);
        assert!(out.skipped.is_empty());
    }

    #[test]
    fn missing_answers_rejected_with_line_number() {
        let text = format!("{GOOD}{}\n", r#"{"id":"4","question":"q","documents":["d"]}"#);
        match parse_dataset(&text, true) {
            Err(IngestError::Malformed { line: 5, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let lenient = parse_dataset(&text, false).unwrap();
        assert_eq!(lenient.bundles.len(), 3);
        assert_eq!(lenient.skipped[0].0, 5);
    }

    #[test]
    fn empty_answers_and_garbage() {
        let text = "{\"id\":\"1\",\"question\":\"q\",\"answers\":[],\"documents\":[\"d\"]}\nnot json\n";
        let out = parse_dataset(text, false).unwrap();
        assert!(out.bundles.is_empty());
        assert_eq!(out.skipped.iter().map(|s| s.0).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn duplicate_ids_fail_even_when_lenient() {
        let text = format!("{GOOD}{}\n", r#"{"id":"2","question":"q","answers":["a"],"documents":["d"]}"#);
        assert!(matches!(
            parse_dataset(&text, false),
            Err(IngestError::DuplicateId { line: 5, .. })
        ));
    }
}

//! Review manifests: one JSON object per line.

use std::collections::HashSet;
use std::path::Path;

use triadrec_core::data::ReviewRecord;

use crate::error::{self, HarnessError, Result};

/// Parses manifest text; `path` only labels errors. Blank lines are skipped.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ReviewRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let record: ReviewRecord = serde_json::from_str(line).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let invalid = |message: String| HarnessError::Validation { path: path.to_path_buf(), line: line_no, message };
        record.validate().map_err(|e| invalid(e.to_string()))?;
        if !seen.insert(record.review_id.clone()) {
            return Err(invalid(format!("duplicate review id '{}'", record.review_id)));
        }
        out.push(record);
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ReviewRecord>> {
    parse_manifest(&error::read_text(path)?, path)
}

pub fn manifest_text(reviews: &[ReviewRecord]) -> String {
    let mut out = String::new();
    for r in reviews {
        out.push_str(&serde_json::to_string(r).expect("review records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(reviews: &[ReviewRecord], path: &Path) -> Result<()> {
    error::write(path, manifest_text(reviews).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<ReviewRecord>> {
        parse_manifest(text, Path::new("m.jsonl"))
    }

    #[test]
    fn empty_file_is_empty() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("\n\n").unwrap().is_empty());
    }

    #[test]
    fn bad_stars_is_a_validation_error() {
        let text = r#"{"review_id":"a","user_id":"u","restaurant_id":"r","stars":6,"images":["x.ppm"]}"#;
        assert!(matches!(parse(text), Err(HarnessError::Validation { line: 1, .. })));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let good = r#"{"review_id":"a","user_id":"u","restaurant_id":"r","stars":4,"images":["x.ppm"]}"#;
        let text = format!("{good}\n\n{{not json\n");
        assert!(matches!(parse(&text), Err(HarnessError::Parse { line: 3, .. })));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let good = r#"{"review_id":"a","user_id":"u","restaurant_id":"r","stars":4,"images":["x.ppm"]}"#;
        let text = format!("{good}\n{good}\n");
        assert!(matches!(parse(&text), Err(HarnessError::Validation { line: 2, .. })));
    }

    #[test]
    fn optional_timestamp() {
        let text = r#"{"review_id":"a","user_id":"u","restaurant_id":"r","stars":2,"images":["x.ppm"],"timestamp":17}"#;
        let r = parse(text).unwrap();
        assert_eq!(r[0].timestamp, Some(17));
        assert_eq!(manifest_text(&r).trim_end(), text);
    }
}

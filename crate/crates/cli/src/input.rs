//! Line-oriented input: plain text, or JSONL with a designated prompt field.

use std::io::Read;
use std::path::Path;

use serde_json::Value;

use crate::CliError;

/// Reads `path`, or stdin when `path` is `None` or `-`.
pub fn read_source(path: Option<&Path>) -> Result<String, CliError> {
    match path {
        Some(p) if p != Path::new("-") => std::fs::read_to_string(p)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display()))),
        _ => {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| CliError::Usage(format!("cannot read stdin: {e}")))?;
            Ok(s)
        }
    }
}

/// One input line. `record` holds the parsed object in JSONL mode.
#[derive(Debug, Clone)]
pub struct Line {
    /// 1-based line number in the source.
    pub number: usize,
    pub text: String,
    pub record: Option<Value>,
}

/// Splits `source` into lines, extracting `field` from each JSON object when
/// given. Blank lines are dropped unless `keep_blank` is set.
pub fn parse_lines(source: &str, field: Option<&str>, keep_blank: bool) -> Result<Vec<Line>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in source.lines().enumerate() {
        let number = i + 1;
        if raw.trim().is_empty() {
            if keep_blank {
                out.push(Line { number, text: raw.to_owned(), record: None });
            }
            continue;
        }
        let Some(field) = field else {
            out.push(Line { number, text: raw.to_owned(), record: None });
            continue;
        };
        let record: Value = serde_json::from_str(raw)
            .map_err(|e| CliError::Usage(format!("line {number}: malformed JSON: {e}")))?;
        let text = record
            .get(field)
            .and_then(Value::as_str)
            .ok_or_else(|| CliError::Usage(format!("line {number}: missing string field `{field}`")))?
            .to_owned();
        out.push(Line { number, text, record: Some(record) });
    }
    Ok(out)
}

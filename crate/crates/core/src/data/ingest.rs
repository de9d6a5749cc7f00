//! Log-file ingestion: CSV and JSONL readers.

use std::io::BufRead;
use std::path::Path;

use serde::Deserialize;

use super::{DataError, RawEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    /// Header `user,timestamp,elements` (header optional), `|`-separated
    /// elements.
    Csv,
    /// One JSON object per line: `{"user": str, "timestamp": num,
    /// "elements": [str]}`.
    Jsonl,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "json" => Ok(Format::Jsonl),
            other => Err(format!("unknown format {other:?} (expected csv or jsonl)")),
        }
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    user: String,
    timestamp: f64,
    elements: Vec<String>,
}

/// Read all records from `path` in file order. Duplicate elements within one
/// record are dropped (first occurrence kept); records are never globally
/// de-duplicated. Malformed records abort with their line number.
pub fn ingest(path: &Path, format: Format) -> Result<Vec<RawEvent>, DataError> {
    let file = std::fs::File::open(path)?;
    ingest_reader(std::io::BufReader::new(file), format)
}

pub fn ingest_reader(reader: impl BufRead, format: Format) -> Result<Vec<RawEvent>, DataError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if format == Format::Csv && line_no == 1 && trimmed == "user,timestamp,elements" {
            continue;
        }
        let event = match format {
            Format::Csv => parse_csv_line(trimmed, line_no)?,
            Format::Jsonl => parse_json_line(trimmed, line_no)?,
        };
        events.push(event);
    }
    if events.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(events)
}

fn parse_csv_line(line: &str, line_no: usize) -> Result<RawEvent, DataError> {
    let mut fields = line.splitn(3, ',');
    let user = fields.next().unwrap_or_default();
    let timestamp = fields.next().ok_or_else(|| DataError::Malformed {
        line: line_no,
        message: "missing timestamp column".into(),
    })?;
    let elements = fields.next().ok_or_else(|| DataError::Malformed {
        line: line_no,
        message: "missing elements column".into(),
    })?;
    if user.is_empty() {
        return Err(DataError::Malformed {
            line: line_no,
            message: "empty user".into(),
        });
    }
    let timestamp: f64 = timestamp.trim().parse().map_err(|_| DataError::Malformed {
        line: line_no,
        message: format!("timestamp {timestamp:?} is not a number"),
    })?;
    let elements: Vec<&str> = elements.split('|').filter(|e| !e.is_empty()).collect();
    build_event(user, timestamp, &elements, line_no)
}

fn parse_json_line(line: &str, line_no: usize) -> Result<RawEvent, DataError> {
    let record: JsonRecord = serde_json::from_str(line).map_err(|e| DataError::Malformed {
        line: line_no,
        message: e.to_string(),
    })?;
    let elements: Vec<&str> = record.elements.iter().map(|s| s.as_str()).collect();
    build_event(&record.user, record.timestamp, &elements, line_no)
}

fn build_event(
    user: &str,
    timestamp: f64,
    elements: &[&str],
    line_no: usize,
) -> Result<RawEvent, DataError> {
    if !timestamp.is_finite() || timestamp < 0.0 {
        return Err(DataError::Malformed {
            line: line_no,
            message: format!("timestamp {timestamp} must be finite and non-negative"),
        });
    }
    let mut seen = std::collections::HashSet::new();
    let mut deduped = Vec::new();
    for &e in elements {
        if seen.insert(e) {
            deduped.push(e.to_string());
        }
    }
    if deduped.is_empty() {
        return Err(DataError::Malformed {
            line: line_no,
            message: "record has no elements".into(),
        });
    }
    Ok(RawEvent {
        user_key: user.to_string(),
        timestamp,
        elements: deduped,
    })
}

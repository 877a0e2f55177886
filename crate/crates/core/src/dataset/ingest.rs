use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::Interaction;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Format> {
        match path.extension()?.to_str()? {
            "csv" => Some(Format::Csv),
            "jsonl" | "json" | "ndjson" => Some(Format::Jsonl),
            _ => None,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::InvalidConfig(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub interactions: Vec<Interaction>,
    /// 1-based row numbers (header excluded) that failed to parse.
    pub malformed_rows: Vec<usize>,
    pub total_rows: usize,
}

/// Reads an interaction log. Malformed rows are skipped and reported; more
/// than 1% malformed rows (and more than one) is fatal.
pub fn ingest_interactions(path: &Path, format: Format) -> Result<IngestReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text, format)
}

pub fn parse_interactions(text: &str, format: Format) -> Result<IngestReport> {
    let mut report = IngestReport::default();
    let mut header_checked = false;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        if !header_checked {
            header_checked = true;
            if format == Format::Csv && line.trim_start().starts_with("user_id") {
                continue;
            }
        }
        report.total_rows += 1;
        let parsed = match format {
            Format::Csv => parse_csv_row(line),
            Format::Jsonl => parse_json_row(line),
        }
        .and_then(|i| i.validate().map(|()| i));
        match parsed {
            Ok(i) => report.interactions.push(i),
            Err(_) => report.malformed_rows.push(report.total_rows),
        }
    }

    if report.total_rows == 0 {
        warn!("interaction log is empty");
    }
    let malformed = report.malformed_rows.len();
    if malformed > 1 && malformed as f64 > 0.01 * report.total_rows as f64 {
        return Err(Error::TooManyMalformed {
            malformed,
            total: report.total_rows,
            rows: report.malformed_rows,
        });
    }
    if malformed > 0 {
        warn!(
            "skipped {malformed} malformed rows: {:?}",
            report.malformed_rows
        );
    }
    Ok(report)
}

fn parse_csv_row(line: &str) -> std::result::Result<Interaction, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(line.as_bytes());
    let record = reader
        .records()
        .next()
        .ok_or("empty row")?
        .map_err(|e| e.to_string())?;
    if record.len() < 3 || record.len() > 4 {
        return Err(format!("expected 3 or 4 fields, got {}", record.len()));
    }
    let timestamp = record[2]
        .trim()
        .parse::<i64>()
        .map_err(|e| e.to_string())?;
    let rating = match record.get(3).map(str::trim) {
        None | Some("") => None,
        Some(r) => Some(r.parse::<f64>().map_err(|e| e.to_string())?),
    };
    Ok(Interaction {
        user_id: record[0].trim().to_owned(),
        item_id: record[1].trim().to_owned(),
        timestamp,
        rating,
    })
}

fn parse_json_row(line: &str) -> std::result::Result<Interaction, String> {
    let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let id = |key: &str| -> std::result::Result<String, String> {
        match v.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Number(n)) => Ok(n.to_string()),
            _ => Err(format!("missing {key}")),
        }
    };
    let timestamp = v
        .get("timestamp")
        .and_then(Value::as_i64)
        .ok_or("missing integer timestamp")?;
    let rating = match v.get("rating") {
        None | Some(Value::Null) => None,
        Some(r) => Some(r.as_f64().ok_or("rating is not a number")?),
    };
    Ok(Interaction {
        user_id: id("user_id")?,
        item_id: id("item_id")?,
        timestamp,
        rating,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_row_maps_fields() {
        let r = parse_interactions("u1,i9,1609459200,5\n", Format::Csv).unwrap();
        assert_eq!(
            r.interactions,
            vec![Interaction::new("u1", "i9", 1609459200).with_rating(5.0)]
        );
        assert!(r.malformed_rows.is_empty());
    }

    #[test]
    fn csv_header_and_missing_rating() {
        let r = parse_interactions("user_id,item_id,timestamp\nu,i,3\n", Format::Csv).unwrap();
        assert_eq!(r.total_rows, 1);
        assert_eq!(r.interactions[0].rating, None);
    }

    #[test]
    fn empty_input_is_empty_list() {
        let r = parse_interactions("", Format::Csv).unwrap();
        assert!(r.interactions.is_empty());
        assert_eq!(r.total_rows, 0);
    }

    #[test]
    fn jsonl_counts_malformed_rows() {
        let text = r#"{"user_id":"a","item_id":"x","timestamp":1}
{"user_id":"a","item_id":"y","timestamp":2,"rating":4.5}
not json
{"user_id":"b","item_id":"x","timestamp":3}
"#;
        let r = parse_interactions(text, Format::Jsonl).unwrap();
        assert_eq!(r.interactions.len(), 3);
        assert_eq!(r.malformed_rows, vec![3]);
    }

    #[test]
    fn many_malformed_rows_are_fatal() {
        let mut text = String::new();
        for t in 0..100 {
            text.push_str(&format!("u,i,{t}\n"));
        }
        text.push_str("bad\nu,i,-5\n");
        match parse_interactions(&text, Format::Csv) {
            Err(Error::TooManyMalformed { rows, .. }) => assert_eq!(rows, vec![101, 102]),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_rating_is_malformed() {
        let r = parse_interactions("u,i,1,7\nu,i,2,3\n", Format::Csv).unwrap();
        assert_eq!(r.malformed_rows, vec![1]);
    }

    #[test]
    fn unreadable_file_is_fatal() {
        let err = ingest_interactions(Path::new("/nonexistent/x.csv"), Format::Csv).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}

//! CSV and JSON-lines writers for metric tables, raw predictions and
//! distance reports.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{DistanceReport, MetricRow, PredictionSet};

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(format!("{}: {other:?}", path.display())),
    }
}

/// Serializes rows to CSV text with a header line.
pub fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let io = |e: csv::Error| Error::Validation(format!("csv: {e}"));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub const METRIC_HEADER: [&str; 6] = ["condition", "group", "k", "numerator", "denominator", "accuracy"];

pub fn metrics_csv(rows: &[MetricRow]) -> Result<String> {
    to_csv(rows, &METRIC_HEADER)
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes a metric table; an empty table is an error so that a run over no
/// items does not leave a header-only file behind.
pub fn write_metrics(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let path = path.as_ref();
    if rows.is_empty() {
        return Err(Error::EmptyReport(format!("no metric rows for {}", path.display())));
    }
    write_text(path, &metrics_csv(rows)?)
}

pub fn read_csv<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    read_csv(path)
}

pub fn predictions_jsonl(sets: &[PredictionSet]) -> String {
    let mut out = String::new();
    for s in sets {
        out.push_str(&serde_json::to_string(s).expect("prediction set serializes"));
        out.push('\n');
    }
    out
}

pub fn distances_csv(report: &DistanceReport) -> Result<String> {
    to_csv(&report.entries, &["source", "focus_word", "euclidean", "cosine"])
}

/// Plain-text rendering of a metric table, one row per line.
pub fn format_table(rows: &[MetricRow]) -> String {
    let mut out = format!("{:<14} {:<12} {:>3} {:>9}  {}\n", "condition", "group", "k", "accuracy", "n/d");
    for r in rows {
        out.push_str(&format!(
            "{:<14} {:<12} {:>3} {:>8.1}%  {}/{}\n",
            r.condition,
            r.group,
            r.k,
            100.0 * r.accuracy,
            r.numerator,
            r.denominator
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_round_trip_through_csv() {
        let rows = vec![
            MetricRow::new("mapp", "all", 1, 73, 94),
            MetricRow::new("perturbed", "eps=0.20", 5, 0, 470),
        ];
        let text = metrics_csv(&rows).unwrap();
        assert!(text.starts_with("condition,group,k,numerator,denominator,accuracy\n"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/m.csv");
        write_metrics(&p, &rows).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), rows);
    }

    #[test]
    fn empty_table_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(write_metrics(dir.path().join("m.csv"), &[]), Err(Error::EmptyReport(_))));
    }
}

use std::io::{Read, Write};
use std::path::Path;

use super::{default_class_names, Dataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Writes a header `x0,..,x{d-1},label` and one row per example with inputs
/// flattened. Values use the shortest decimal that round-trips exactly.
pub fn write_csv(ds: &Dataset, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = ds.inputs().row_len();
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    let io = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
    w.write_record(&header).map_err(io)?;
    for (row, label) in ds.inputs().rows().zip(ds.labels()) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(label.to_string());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("csv write failed: {e}")))?;
    Ok(())
}

/// Parses a CSV with a header row. Every column except `label_column` is a
/// float feature. With `classes = None` the class count is `max label + 1`.
pub fn read_csv(
    source_name: &str,
    input: impl Read,
    label_column: &str,
    classes: Option<usize>,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let err = |line: u64, msg: String| Error::parse(source_name, format!("line {line}"), msg);
    let headers = rdr
        .headers()
        .map_err(|e| err(1, format!("malformed header: {e}")))?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(err(1, "malformed header: no columns".into()));
    }
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| err(1, format!("malformed header: no column named {label_column:?}")))?;
    let width = headers.len() - 1;
    if width == 0 {
        return Err(err(1, "malformed header: no feature columns".into()));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            match e.kind() {
                csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                    err(line, format!("ragged row: expected {expected_len} fields, got {len}"))
                }
                _ => err(line, e.to_string()),
            }
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        for (j, field) in rec.iter().enumerate() {
            if j == label_idx {
                let label: usize = field
                    .trim()
                    .parse()
                    .map_err(|_| err(line, format!("label {field:?} is not a nonnegative integer")))?;
                if let Some(c) = classes {
                    if label >= c {
                        return Err(err(line, format!("label {label} out of range for {c} classes")));
                    }
                }
                labels.push(label);
            } else {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| err(line, format!("column {} value {field:?} is not a number", headers.get(j).unwrap_or("?"))))?;
                if !v.is_finite() {
                    return Err(err(line, format!("non-finite value in column {}", headers.get(j).unwrap_or("?"))));
                }
                data.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::parse(source_name, "line 2", "no records"));
    }
    let c = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1)).max(1);
    let n = labels.len();
    Dataset::new(
        Tensor::new(vec![n, width], data)?,
        labels,
        default_class_names(c),
        Provenance::Csv,
    )
}

pub fn load_csv(path: &Path, label_column: &str, classes: Option<usize>) -> Result<Dataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(&path.display().to_string(), f, label_column, classes)
}

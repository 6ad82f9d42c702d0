//! Headerless numeric CSV for matrices, a one-column `kinds.csv`, and
//! headed CSV tables for reports.

use std::fs;
use std::path::Path;

use mssl_core::OutcomeKind;
use ndarray::{Array2, ArrayView2};

use crate::error::{CliError, CliResult};

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt_f64)
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Data(format!("{}: malformed CSV: {other:?}", path.display())),
    }
}

pub fn read_matrix(path: &Path) -> CliResult<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(CliError::Data(format!(
                    "{}: row {} has {} fields, expected {c}",
                    path.display(),
                    i + 1,
                    record.len()
                )))
            }
            _ => {}
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::Data(format!(
                    "{}: row {}, column {}: cannot parse {field:?} as a number",
                    path.display(),
                    i + 1,
                    j + 1
                ))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| CliError::Data(format!("{}: no data", path.display())))?;
    Ok(Array2::from_shape_vec((rows, cols), values).expect("row lengths checked"))
}

pub fn write_matrix(path: &Path, m: ArrayView2<f64>) -> CliResult<()> {
    let mut out = String::with_capacity(m.len() * 20);
    for row in m.rows() {
        let fields: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

pub fn read_kinds(path: &Path) -> CliResult<Vec<OutcomeKind>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut kinds = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let kind = OutcomeKind::parse(line).ok_or_else(|| {
            CliError::Data(format!(
                "{}: line {}: expected \"continuous\" or \"binary\", got {line:?}",
                path.display(),
                i + 1
            ))
        })?;
        kinds.push(kind);
    }
    if kinds.is_empty() {
        return Err(CliError::Data(format!("{}: no outcome kinds", path.display())));
    }
    Ok(kinds)
}

pub fn write_kinds(path: &Path, kinds: &[OutcomeKind]) -> CliResult<()> {
    let mut out = String::new();
    for k in kinds {
        out.push_str(k.as_str());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// Writes a table with a header row.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut writer = csv::WriterBuilder::new().from_path(path).map_err(|e| csv_error(path, e))?;
    writer.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        writer.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a headed table as (header, rows of strings).
pub fn read_table(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

pub fn ensure_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

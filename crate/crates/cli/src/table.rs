//! CSV input/output. Files carry a mandatory header; responses are stored as
//! the lower triangle of Y in row-major order (y11, y21, y22, y31, ...).

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use mam_core::SpdMatrix;

use crate::Failure;

pub fn response_width(m: usize) -> usize {
    m * (m + 1) / 2
}

pub fn response_headers(m: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(response_width(m));
    for i in 1..=m {
        for j in 1..=i {
            out.push(format!("y{i}{j}"));
        }
    }
    out
}

pub fn predictor_headers(q: usize) -> Vec<String> {
    (1..=q).map(|k| format!("x{k}")).collect()
}

/// Shortest representation that parses back to the same f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// A parsed numeric CSV file.
#[derive(Debug, Clone)]
pub struct NumericTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl NumericTable {
    pub fn width(&self) -> usize {
        self.headers.len()
    }

    /// Rejects tables whose column count differs from `expected`.
    pub fn require_width(&self, expected: usize, what: &str) -> Result<(), Failure> {
        if self.width() != expected {
            return Err(Failure::usage(anyhow::anyhow!(
                "{what} needs {expected} columns, the file has {}",
                self.width()
            )));
        }
        Ok(())
    }
}

/// Reads a headed, comma-separated numeric file. Row numbers in error
/// messages count data rows from 1.
pub fn read_numeric(path: &Path) -> Result<NumericTable, Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))
        .map_err(Failure::usage)?;
    let headers: Vec<String> = reader
        .headers()
        .with_context(|| format!("cannot read the header of {}", path.display()))
        .map_err(Failure::usage)?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Failure::usage(anyhow::anyhow!("{} has no header row", path.display())));
    }
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record
            .with_context(|| format!("row {row}: malformed record"))
            .map_err(Failure::usage)?;
        let mut values = Vec::with_capacity(record.len());
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .with_context(|| format!("row {row}, column {}: `{field}` is not a number", col + 1))
                .map_err(Failure::usage)?;
            if !v.is_finite() {
                return Err(Failure::usage(anyhow::anyhow!(
                    "row {row}, column {}: value must be finite",
                    col + 1
                )));
            }
            values.push(v);
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Failure::usage(anyhow::anyhow!("{} has no data rows", path.display())));
    }
    Ok(NumericTable { headers, rows })
}

/// Splits a labeled table into predictor rows and SPD responses.
pub fn split_labeled(
    table: &NumericTable,
    q: usize,
    m: usize,
) -> Result<(Vec<Vec<f64>>, Vec<SpdMatrix>), Failure> {
    table.require_width(q + response_width(m), &format!("data with q = {q}, m = {m}"))?;
    let mut xs = Vec::with_capacity(table.rows.len());
    let mut ys = Vec::with_capacity(table.rows.len());
    for (idx, row) in table.rows.iter().enumerate() {
        let y = SpdMatrix::from_lower_triangle(m, &row[q..])
            .with_context(|| format!("row {}: response is not a valid SPD matrix", idx + 1))
            .map_err(Failure::usage)?;
        xs.push(row[..q].to_vec());
        ys.push(y);
    }
    Ok((xs, ys))
}

/// Writes `contents` to a temporary file next to `path`, then renames it
/// into place so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create a temporary file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Serializes header + rows as CSV.
pub fn csv_bytes(headers: &[String], rows: &[Vec<String>]) -> anyhow::Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(headers)?;
    for row in rows {
        writer.write_record(row)?;
    }
    writer.into_inner().map_err(|e| anyhow::anyhow!("{e}"))
}

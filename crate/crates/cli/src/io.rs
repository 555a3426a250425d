//! CSV matrices: a header row and a first column of labels.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use bimlta::{Covariates, IncidenceMatrix};
use ndarray::Array2;

use crate::error::{CliError, Result};

/// A CSV table kept as text, for rule-driven binarization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    /// Header of the label column.
    pub label_header: String,
    /// Headers of the value columns.
    pub columns: Vec<String>,
    pub labels: Vec<String>,
    pub cells: Vec<Vec<String>>,
    /// 1-based file line of every row.
    pub lines: Vec<u64>,
}

impl RawTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

pub fn parse_table(reader: impl Read, path: &Path) -> Result<RawTable> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = csv.headers().map_err(|e| CliError::format(path, e.to_string()))?.clone();
    if header.is_empty() {
        return Err(CliError::format(path, "missing header row"));
    }
    let mut table = RawTable {
        label_header: header[0].to_string(),
        columns: header.iter().skip(1).map(str::to_string).collect(),
        labels: Vec::new(),
        cells: Vec::new(),
        lines: Vec::new(),
    };
    for record in csv.records() {
        let record = record.map_err(|e| CliError::format(path, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(CliError::format(
                path,
                format!("line {line} has {} fields, expected {}", record.len(), header.len()),
            ));
        }
        table.labels.push(record[0].to_string());
        table.cells.push(record.iter().skip(1).map(str::to_string).collect());
        table.lines.push(line);
    }
    Ok(table)
}

pub fn load_table(path: &Path) -> Result<RawTable> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_table(file, path)
}

pub fn parse_incidence(reader: impl Read, path: &Path) -> Result<IncidenceMatrix> {
    let table = parse_table(reader, path)?;
    let (n, r) = (table.labels.len(), table.columns.len());
    let mut data = Array2::<u8>::zeros((n, r));
    for (i, row) in table.cells.iter().enumerate() {
        for (k, cell) in row.iter().enumerate() {
            data[[i, k]] = match cell.as_str() {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(CliError::Cell {
                        path: path.to_path_buf(),
                        line: table.lines[i],
                        column: table.columns[k].clone(),
                        message: format!("expected 0 or 1, found '{other}'"),
                    })
                }
            };
        }
    }
    Ok(IncidenceMatrix::new(data, table.labels, table.columns)?)
}

pub fn load_incidence(path: &Path) -> Result<IncidenceMatrix> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_incidence(file, path)
}

pub fn write_incidence(y: &IncidenceMatrix, label_header: &str, writer: impl Write) -> csv::Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(std::iter::once(label_header).chain(y.receiving_labels().iter().map(String::as_str)))?;
    for (label, row) in y.sending_labels().iter().zip(y.data().rows()) {
        csv.write_record(std::iter::once(label.clone()).chain(row.iter().map(u8::to_string)))?;
    }
    csv.flush()?;
    Ok(())
}

pub fn save_incidence(y: &IncidenceMatrix, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_incidence(y, "id", file).map_err(|e| CliError::format(path, e.to_string()))
}

/// Reads real-valued covariates, reorders them to `sending_labels` and
/// prepends an intercept column.
pub fn load_covariates(path: &Path, sending_labels: &[String]) -> Result<Covariates> {
    let table = load_table(path)?;
    let index: HashMap<&str, usize> = table.labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    if index.len() != table.labels.len() {
        return Err(CliError::format(path, "duplicate row labels"));
    }
    let mut raw = Array2::<f64>::zeros((sending_labels.len(), table.columns.len()));
    for (i, label) in sending_labels.iter().enumerate() {
        let &row = index
            .get(label.as_str())
            .ok_or_else(|| CliError::format(path, format!("no covariate row for sending node '{label}'")))?;
        for (j, cell) in table.cells[row].iter().enumerate() {
            raw[[i, j]] = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| CliError::Cell {
                path: path.to_path_buf(),
                line: table.lines[row],
                column: table.columns[j].clone(),
                message: format!("expected a finite number, found '{cell}'"),
            })?;
        }
    }
    Ok(Covariates::with_intercept(raw, table.columns)?)
}

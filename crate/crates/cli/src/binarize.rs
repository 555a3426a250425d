//! Rule-driven recoding of a raw table into a binary incidence matrix.

use std::path::Path;

use bimlta::IncidenceMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::RawTable;

/// One output column, computed from one input column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarizationRule {
    pub column: String,
    /// Header of the output column; defaults to `<column>_<kind>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub kind: RuleKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleKind {
    /// 1 iff v > threshold.
    GreaterThan { threshold: f64 },
    /// 1 iff v >= threshold.
    GreaterEqual { threshold: f64 },
    /// 1 iff v < lower or v > upper.
    OutsideRange { lower: f64, upper: f64 },
    /// 1 iff the cell equals `category`.
    EqualsCategory { category: String },
}

impl RuleKind {
    fn tag(&self) -> &'static str {
        match self {
            Self::GreaterThan { .. } => "greater_than",
            Self::GreaterEqual { .. } => "greater_equal",
            Self::OutsideRange { .. } => "outside_range",
            Self::EqualsCategory { .. } => "equals_category",
        }
    }
}

/// Empty cells and the usual NA spellings.
pub fn is_missing(cell: &str) -> bool {
    let cell = cell.trim();
    cell.is_empty() || ["na", "n/a", "nan", "null", ".", "?"].iter().any(|m| cell.eq_ignore_ascii_case(m))
}

impl BinarizationRule {
    pub fn new(column: impl Into<String>, kind: RuleKind) -> Self {
        Self {
            column: column.into(),
            name: None,
            kind,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let finite = |v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(format!("rule on '{}': threshold must be finite", self.column))
            }
        };
        match self.kind {
            RuleKind::GreaterThan { threshold } | RuleKind::GreaterEqual { threshold } => finite(threshold),
            RuleKind::OutsideRange { lower, upper } => {
                finite(lower)?;
                finite(upper)?;
                if lower < upper {
                    Ok(())
                } else {
                    Err(format!(
                        "rule on '{}': outside_range needs lower < upper, got {lower} and {upper}",
                        self.column
                    ))
                }
            }
            RuleKind::EqualsCategory { .. } => Ok(()),
        }
    }

    pub fn output_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("{}_{}", self.column, self.kind.tag()))
    }

    /// `Ok(None)` for a missing cell, `Err` for a cell that is not a number
    /// under a numeric rule.
    pub fn apply(&self, cell: &str) -> std::result::Result<Option<u8>, String> {
        if is_missing(cell) {
            return Ok(None);
        }
        let cell = cell.trim();
        if let RuleKind::EqualsCategory { category } = &self.kind {
            return Ok(Some(u8::from(cell == category.trim())));
        }
        let v: f64 = cell
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| format!("expected a number, found '{cell}'"))?;
        let one = match self.kind {
            RuleKind::GreaterThan { threshold } => v > threshold,
            RuleKind::GreaterEqual { threshold } => v >= threshold,
            RuleKind::OutsideRange { lower, upper } => v < lower || v > upper,
            RuleKind::EqualsCategory { .. } => unreachable!(),
        };
        Ok(Some(u8::from(one)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binarized {
    pub matrix: IncidenceMatrix,
    /// Input row of every output row.
    pub kept_rows: Vec<usize>,
    /// Input rows dropped because a rule column was missing.
    pub dropped_rows: Vec<usize>,
}

/// Applies `rules` to every row of `table`. Rows with a missing value in any
/// rule column are dropped; the count and the row mapping are logged.
pub fn binarize(table: &RawTable, rules: &[BinarizationRule], source: &Path) -> Result<Binarized> {
    if rules.is_empty() {
        return Err(CliError::Config("no binarization rules".into()));
    }
    let mut columns = Vec::with_capacity(rules.len());
    for rule in rules {
        rule.validate().map_err(CliError::Config)?;
        let idx = table
            .column_index(&rule.column)
            .ok_or_else(|| CliError::format(source, format!("no column named '{}'", rule.column)))?;
        columns.push(idx);
    }
    let names: Vec<String> = rules.iter().map(BinarizationRule::output_name).collect();

    let mut values = Vec::new();
    let mut kept_rows = Vec::new();
    let mut dropped_rows = Vec::new();
    'rows: for (i, row) in table.cells.iter().enumerate() {
        let mut out = Vec::with_capacity(rules.len());
        for (rule, &c) in rules.iter().zip(&columns) {
            match rule.apply(&row[c]) {
                Ok(Some(v)) => out.push(v),
                Ok(None) => {
                    dropped_rows.push(i);
                    continue 'rows;
                }
                Err(message) => {
                    return Err(CliError::Cell {
                        path: source.to_path_buf(),
                        line: table.lines[i],
                        column: rule.column.clone(),
                        message,
                    })
                }
            }
        }
        values.extend(out);
        kept_rows.push(i);
    }

    log::info!(
        "binarize: {} of {} rows dropped for missing values, {} kept",
        dropped_rows.len(),
        table.labels.len(),
        kept_rows.len()
    );
    if !dropped_rows.is_empty() {
        let labels: Vec<&str> = dropped_rows.iter().map(|&i| table.labels[i].as_str()).collect();
        log::info!("binarize: dropped rows {labels:?}");
    }
    let mapping: Vec<String> = kept_rows
        .iter()
        .enumerate()
        .map(|(o, &i)| format!("{}<-{}", o + 1, i + 1))
        .collect();
    log::info!("binarize: output row <- input row: {}", mapping.join(" "));

    let data = Array2::from_shape_vec((kept_rows.len(), rules.len()), values).expect("row-major layout");
    let labels = kept_rows.iter().map(|&i| table.labels[i].clone()).collect();
    Ok(Binarized {
        matrix: IncidenceMatrix::new(data, labels, names)?,
        kept_rows,
        dropped_rows,
    })
}

#[derive(Deserialize)]
struct RuleFile {
    rules: Vec<BinarizationRule>,
}

/// Reads rules from JSON (an array, or an object with a `rules` array) or
/// from TOML (`[[rules]]` tables), chosen by file extension.
pub fn load_rules(path: &Path) -> Result<Vec<BinarizationRule>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let rules = if is_toml {
        toml::from_str::<RuleFile>(&text).map(|f| f.rules).map_err(|e| e.to_string())
    } else {
        serde_json::from_str::<Vec<BinarizationRule>>(&text)
            .or_else(|_| serde_json::from_str::<RuleFile>(&text).map(|f| f.rules))
            .map_err(|e| e.to_string())
    };
    rules.map_err(|m| CliError::format(path, m))
}

//! Observation matrices, known labels, and CSV ingestion.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{CnError, Result};

/// `n` observations of dimension `p`, stored one observation per column so
/// each observation is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    xt: DMatrix<f64>,
    columns: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from an `n × p` matrix.
    pub fn from_matrix(x: &DMatrix<f64>) -> Result<Self> {
        let columns = (1..=x.ncols()).map(|j| format!("X{j}")).collect();
        Self::with_columns(x, columns)
    }

    pub fn with_columns(x: &DMatrix<f64>, columns: Vec<String>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(CnError::Input("dataset is empty".into()));
        }
        if columns.len() != x.ncols() {
            return Err(CnError::DimensionMismatch("column names do not match the data width".into()));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(CnError::Input(format!("non-finite value at row {}", pos % x.nrows() + 1)));
        }
        Ok(Self { xt: x.transpose(), columns })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != p) {
            return Err(CnError::DimensionMismatch("rows have different lengths".into()));
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::from_matrix(&x)
    }

    pub fn n(&self) -> usize {
        self.xt.ncols()
    }

    pub fn p(&self) -> usize {
        self.xt.nrows()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.xt.as_slice()[i * p..(i + 1) * p]
    }

    /// The data as a `p × n` matrix.
    pub fn xt(&self) -> &DMatrix<f64> {
        &self.xt
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        self.xt.transpose()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }
}

/// Known component memberships for a subset of rows (model-based classification).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnownLabels {
    groups: Vec<Option<usize>>,
}

impl KnownLabels {
    /// No labeled rows: the clustering case.
    pub fn none(n: usize) -> Self {
        Self { groups: vec![None; n] }
    }

    /// From 1-based row positions and 1-based group labels.
    pub fn from_positions(n: usize, positions: &[usize], labels: &[usize]) -> Result<Self> {
        if positions.len() != labels.len() {
            return Err(CnError::InvalidParameter(format!(
                "{} labeled positions but {} labels",
                positions.len(),
                labels.len()
            )));
        }
        let mut groups = vec![None; n];
        for (&pos, &lab) in positions.iter().zip(labels) {
            if pos == 0 || pos > n {
                return Err(CnError::InvalidParameter(format!("labeled position {pos} is outside 1..={n}")));
            }
            if lab == 0 {
                return Err(CnError::InvalidParameter("group labels start at 1".into()));
            }
            if groups[pos - 1].replace(lab - 1).is_some() {
                return Err(CnError::InvalidParameter(format!("row {pos} is labeled twice")));
            }
        }
        Ok(Self { groups })
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// 0-based group of row `i`, if known.
    pub fn get(&self, i: usize) -> Option<usize> {
        self.groups[i]
    }

    pub fn labeled_count(&self) -> usize {
        self.groups.iter().filter(|g| g.is_some()).count()
    }

    pub fn max_group(&self) -> Option<usize> {
        self.groups.iter().flatten().copied().max()
    }

    pub fn validate(&self, n: usize, g: usize) -> Result<()> {
        if self.groups.len() != n {
            return Err(CnError::DimensionMismatch(format!("labels cover {} rows, data has {n}", self.groups.len())));
        }
        if let Some(max) = self.max_group() {
            if max >= g {
                return Err(CnError::InvalidParameter(format!("label {} exceeds G = {g}", max + 1)));
            }
        }
        Ok(())
    }
}

/// A parsed CSV file: numeric features plus an optional label column.
#[derive(Debug, Clone)]
pub struct CsvData {
    pub data: Dataset,
    pub truth: Option<Vec<String>>,
}

/// Reads a headed CSV. Every column except `label_column` must be numeric.
pub fn read_csv(path: &Path, label_column: Option<&str>) -> Result<CsvData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CnError::Input(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CnError::Input(format!("cannot read header of {}: {e}", path.display())))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let label_idx = match label_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CnError::Input(format!("label column '{name}' not found in header {headers:?}")))?,
        ),
        None => None,
    };
    let feature_idx: Vec<usize> = (0..headers.len()).filter(|&j| Some(j) != label_idx).collect();
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CnError::Input(format!("{}: {e}", path.display())))?;
        let mut row = Vec::with_capacity(feature_idx.len());
        for &j in &feature_idx {
            let cell = record.get(j).unwrap_or("");
            let value: f64 = cell.parse().map_err(|_| {
                CnError::Input(format!(
                    "{}: row {} column '{}' is not numeric: '{cell}'",
                    path.display(),
                    line + 2,
                    headers[j]
                ))
            })?;
            row.push(value);
        }
        rows.push(row);
        if let Some(j) = label_idx {
            truth.push(record.get(j).unwrap_or("").to_string());
        }
    }
    if rows.is_empty() {
        return Err(CnError::Input(format!("{} has no data rows", path.display())));
    }
    let columns = feature_idx.iter().map(|&j| headers[j].clone()).collect();
    let x = DMatrix::from_fn(rows.len(), feature_idx.len(), |i, j| rows[i][j]);
    Ok(CsvData { data: Dataset::with_columns(&x, columns)?, truth: label_idx.map(|_| truth) })
}

/// Distinct labels in display order: numeric order when every label parses
/// as a number, lexicographic otherwise.
pub fn label_levels(labels: &[String]) -> Vec<String> {
    let distinct: BTreeSet<&String> = labels.iter().collect();
    let mut levels: Vec<String> = distinct.into_iter().cloned().collect();
    if levels.iter().all(|l| l.parse::<f64>().is_ok()) {
        levels.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    levels
}

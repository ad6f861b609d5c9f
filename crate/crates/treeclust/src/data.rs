//! Observation/covariate matrices and CSV ingestion.

use crate::{Error, Result};
use nalgebra::DMatrix;
use std::path::Path;

/// Observations `y` (n x p, subjects as rows) and covariates `x` (n x d).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
}

impl Dataset {
    /// Wrap matrices with consistent row counts and finite entries. An empty
    /// subject set is allowed for prior-only runs; loaded files must be
    /// non-empty (enforced by [`load_dataset`]).
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        if y.nrows() != x.nrows() {
            return Err(Error::Data(format!(
                "observations have {} rows but covariates have {}",
                y.nrows(),
                x.nrows()
            )));
        }
        if y.ncols() < 1 || x.ncols() < 1 {
            return Err(Error::Data("data and covariates need at least one column".into()));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in data".into()));
        }
        Ok(Dataset { y, x })
    }

    /// A dataset with no subjects; used for prior-only chains.
    pub fn empty(p: usize, d: usize) -> Self {
        Dataset { y: DMatrix::zeros(0, p), x: DMatrix::zeros(0, d) }
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }
}

/// Parse a numeric CSV. A single leading header row is detected (and
/// skipped) when any of its cells fails to parse as a number. Errors carry
/// 1-based line numbers.
fn read_numeric_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, String> = cells
            .iter()
            .enumerate()
            .map(|(col, cell)| {
                cell.parse::<f64>()
                    .map_err(|_| format!("line {line_no}, column {}: not a number: {cell:?}", col + 1))
                    .and_then(|v| {
                        if v.is_finite() {
                            Ok(v)
                        } else {
                            Err(format!("line {line_no}, column {}: non-finite value", col + 1))
                        }
                    })
            })
            .collect();
        match parsed {
            Ok(values) => {
                if let Some(w) = width {
                    if values.len() != w {
                        return Err(Error::Data(format!(
                            "{}: line {line_no} has {} cells, expected {w}",
                            path.display(),
                            values.len()
                        )));
                    }
                } else {
                    width = Some(values.len());
                }
                rows.push(values);
            }
            Err(msg) => {
                if rows.is_empty() && width.is_none() {
                    // Treat the first unparseable row as a header.
                    width = None;
                    continue;
                }
                return Err(Error::Data(format!("{}: {msg}", path.display())));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

fn rows_to_matrix(rows: Vec<Vec<f64>>) -> DMatrix<f64> {
    let n = rows.len();
    let p = rows[0].len();
    DMatrix::from_fn(n, p, |i, j| rows[i][j])
}

/// Load observations and optional covariates from CSV files.
///
/// Without a covariates file the design is intercept-only (a single ones
/// column). With one, an intercept column is prepended unless some column is
/// already constant.
pub fn load_dataset(data_path: &Path, covariates_path: Option<&Path>) -> Result<Dataset> {
    let y = rows_to_matrix(read_numeric_csv(data_path)?);
    let n = y.nrows();
    let x = match covariates_path {
        None => DMatrix::from_element(n, 1, 1.0),
        Some(path) => {
            let raw = rows_to_matrix(read_numeric_csv(path)?);
            if raw.nrows() != n {
                return Err(Error::Data(format!(
                    "row mismatch: {} has {n} rows but {} has {}",
                    data_path.display(),
                    path.display(),
                    raw.nrows()
                )));
            }
            let has_constant_column = (0..raw.ncols()).any(|j| {
                let col = raw.column(j);
                col.iter().all(|&v| v == col[0])
            });
            if has_constant_column {
                raw
            } else {
                let mut x = DMatrix::zeros(n, raw.ncols() + 1);
                x.column_mut(0).fill(1.0);
                x.view_mut((0, 1), (n, raw.ncols())).copy_from(&raw);
                x
            }
        }
    };
    Dataset::new(y, x)
}

/// Write a matrix as plain CSV (no header), one row per line.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

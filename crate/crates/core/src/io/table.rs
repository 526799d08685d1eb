//! Delimited numeric tables with row and column names.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// How samples are laid out in a data file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orientation {
    #[default]
    SamplesAsRows,
    SamplesAsColumns,
}

/// A matrix with names for its rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedMatrix {
    pub row_names: Vec<String>,
    pub col_names: Vec<String>,
    pub matrix: Matrix,
}

impl NamedMatrix {
    pub fn new(row_names: Vec<String>, col_names: Vec<String>, matrix: Matrix) -> Result<Self> {
        if row_names.len() != matrix.rows() || col_names.len() != matrix.cols() {
            return Err(Error::DimensionMismatch {
                op: "named matrix",
                expected: format!("{}x{} names", matrix.rows(), matrix.cols()),
                found: format!("{}x{}", row_names.len(), col_names.len()),
            });
        }
        check_unique(&row_names, "row")?;
        check_unique(&col_names, "column")?;
        Ok(NamedMatrix {
            row_names,
            col_names,
            matrix,
        })
    }

    pub fn transpose(&self) -> NamedMatrix {
        NamedMatrix {
            row_names: self.col_names.clone(),
            col_names: self.row_names.clone(),
            matrix: self.matrix.transpose(),
        }
    }

    pub fn select_columns(&self, idx: &[usize]) -> NamedMatrix {
        NamedMatrix {
            row_names: self.row_names.clone(),
            col_names: idx.iter().map(|&j| self.col_names[j].clone()).collect(),
            matrix: self.matrix.select_columns(idx),
        }
    }
}

fn check_unique(names: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for name in names {
        if !seen.insert(name.as_str()) {
            return Err(Error::invalid(format!("duplicate {what} name {name:?}")));
        }
    }
    Ok(())
}

/// Tab when the first line has more tabs than commas, else comma.
pub fn sniff_delimiter(text: &str) -> u8 {
    let first = text.lines().next().unwrap_or("");
    let tabs = first.matches('\t').count();
    let commas = first.matches(',').count();
    if tabs > commas {
        b'\t'
    } else {
        b','
    }
}

/// Parses a table whose first row holds column names and first column row
/// names. The top-left cell may be empty or hold anything.
pub fn parse_matrix(text: &str, source: &Path) -> Result<NamedMatrix> {
    let table_err = |row: usize, col: usize, message: String| Error::Table {
        path: source.to_path_buf(),
        row,
        col,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(sniff_delimiter(text))
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(table_err(0, 0, "empty table".into())),
    };
    let width = header.len();
    if width < 2 {
        return Err(table_err(1, 1, "header needs at least one column name".into()));
    }
    let col_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    for (j, name) in col_names.iter().enumerate() {
        if name.is_empty() {
            return Err(table_err(1, j + 2, "empty column name".into()));
        }
    }

    let mut row_names = Vec::new();
    let mut data = Vec::new();
    for (i, record) in records.enumerate() {
        let record = record?;
        let line = i + 2;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != width {
            return Err(table_err(
                line,
                record.len().min(width) + 1,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        let name = &record[0];
        if name.is_empty() {
            return Err(table_err(line, 1, "empty row name".into()));
        }
        row_names.push(name.to_string());
        for (j, cell) in record.iter().enumerate().skip(1) {
            let value: f64 = cell
                .parse()
                .map_err(|_| table_err(line, j + 1, format!("non-numeric cell {cell:?}")))?;
            if !value.is_finite() {
                return Err(table_err(line, j + 1, format!("non-finite cell {cell:?}")));
            }
            data.push(value);
        }
    }
    if row_names.is_empty() {
        return Err(table_err(2, 1, "table has no data rows".into()));
    }
    let matrix = Matrix::from_vec(row_names.len(), col_names.len(), data)?;
    NamedMatrix::new(row_names, col_names, matrix).map_err(|e| table_err(1, 1, e.to_string()))
}

/// Reads a named matrix, transposing when samples are columns.
pub fn read_matrix(path: &Path, orientation: Orientation) -> Result<NamedMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m = parse_matrix(&text, path)?;
    Ok(match orientation {
        Orientation::SamplesAsRows => m,
        Orientation::SamplesAsColumns => m.transpose(),
    })
}

/// Writes comma-separated output with an empty top-left cell and shortest
/// round-trip decimals.
pub fn write_matrix_to<W: Write>(m: &NamedMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![String::new()];
    header.extend(m.col_names.iter().cloned());
    w.write_record(&header)?;
    for (i, name) in m.row_names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(m.matrix.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::output("<csv>", e))?;
    Ok(())
}

pub fn write_matrix(m: &NamedMatrix, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::output(path, e))?;
    write_matrix_to(m, std::io::BufWriter::new(file))
}

/// `log(x + c)` elementwise.
pub fn started_log(x: &Matrix, c: f64) -> Result<Matrix> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid(format!("log constant must be positive, got {c}")));
    }
    if let Some(v) = x.as_slice().iter().find(|&&v| v < 0.0) {
        return Err(Error::invalid(format!(
            "started log needs nonnegative entries, found {v}"
        )));
    }
    Ok(x.map(|v| (v + c).ln()))
}

/// Divides each column by its sample standard deviation; constant columns
/// are rejected.
pub fn standardize_columns(x: &Matrix) -> Result<Matrix> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::invalid("standardising needs at least two samples"));
    }
    let means = x.column_means();
    let mut sd = vec![0.0; p];
    for i in 0..n {
        for (j, s) in sd.iter_mut().enumerate() {
            *s += (x[(i, j)] - means[j]).powi(2);
        }
    }
    for (j, s) in sd.iter_mut().enumerate() {
        *s = (*s / (n - 1) as f64).sqrt();
        if *s == 0.0 {
            return Err(Error::invalid(format!(
                "column {j} is constant and cannot be standardised"
            )));
        }
    }
    let inv: Vec<f64> = sd.iter().map(|s| 1.0 / s).collect();
    Ok(x.scale_columns(&inv))
}

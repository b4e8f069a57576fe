//! Delimited text matrices with row and column labels.
//!
//! The first line holds a corner cell followed by column ids; every later
//! line holds a row id followed by numeric cells. `.csv` files are comma
//! separated, anything else is tab separated.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Rows are features, columns are samples (the response matrix).
    FeaturesBySamples,
    /// Rows are samples, columns are covariates.
    SamplesByCovariates,
}

impl Orientation {
    fn row_kind(self) -> &'static str {
        match self {
            Orientation::FeaturesBySamples => "feature",
            Orientation::SamplesByCovariates => "sample",
        }
    }

    fn col_kind(self) -> &'static str {
        match self {
            Orientation::FeaturesBySamples => "sample",
            Orientation::SamplesByCovariates => "covariate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub corner: String,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub values: DMatrix<f64>,
}

impl LabeledMatrix {
    pub fn transpose(&self) -> LabeledMatrix {
        LabeledMatrix {
            corner: self.corner.clone(),
            row_ids: self.col_ids.clone(),
            col_ids: self.row_ids.clone(),
            values: self.values.transpose(),
        }
    }

    /// Reorders rows to follow `order`, which must be a permutation of the row ids.
    pub fn reorder_rows(&self, order: &[String]) -> Result<LabeledMatrix> {
        let index: HashMap<&str, usize> = self
            .row_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        if order.len() != self.row_ids.len() {
            return Err(Error::Dimension(format!(
                "expected {} ids, matrix has {} rows",
                order.len(),
                self.row_ids.len()
            )));
        }
        let rows = order
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Dimension(format!("id `{id}` not found among matrix rows")))
            })
            .collect::<Result<Vec<_>>>()?;
        let values = DMatrix::from_fn(rows.len(), self.values.ncols(), |i, j| self.values[(rows[i], j)]);
        Ok(LabeledMatrix {
            corner: self.corner.clone(),
            row_ids: order.to_vec(),
            col_ids: self.col_ids.clone(),
            values,
        })
    }
}

fn delimiter(path: &Path) -> char {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => ',',
        _ => '\t',
    }
}

fn check_unique(ids: &[String], kind: &str, path: &Path) -> Result<()> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (i, id) in ids.iter().enumerate() {
        if let Some(first) = seen.insert(id.as_str(), i) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("duplicate {kind} id `{id}` at positions {} and {}", first + 1, i + 1),
            });
        }
    }
    Ok(())
}

/// Parses delimited text. `path` is used for the delimiter and error messages.
pub fn parse_matrix(text: &str, path: &Path, orientation: Orientation) -> Result<LabeledMatrix> {
    let delim = delimiter(path);
    let err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err("file is empty".into()))?;
    let mut header_cells = header.split(delim).map(|s| s.trim().to_string());
    let corner = header_cells.next().unwrap_or_default();
    let col_ids: Vec<String> = header_cells.collect();
    if col_ids.is_empty() {
        return Err(err("header has no column ids".into()));
    }
    let ncols = col_ids.len();

    let mut row_ids = Vec::new();
    let mut data = Vec::new();
    for (line_no, line) in lines {
        let mut cells = line.split(delim);
        let id = cells.next().unwrap_or_default().trim().to_string();
        let before = data.len();
        for (j, cell) in cells.enumerate() {
            if j >= ncols {
                break;
            }
            let cell = cell.trim();
            let value: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                err(format!(
                    "line {line_no}, column {} ({} `{id}`, {} `{}`): `{cell}` is not a finite number",
                    j + 2,
                    orientation.row_kind(),
                    orientation.col_kind(),
                    col_ids[j]
                ))
            })?;
            data.push(value);
        }
        let got = line.split(delim).count() - 1;
        if got != ncols || data.len() - before != ncols {
            return Err(err(format!(
                "line {line_no} ({} `{id}`) has {got} values, header has {ncols}",
                orientation.row_kind()
            )));
        }
        row_ids.push(id);
    }
    if row_ids.is_empty() {
        return Err(err("no data rows".into()));
    }
    check_unique(&row_ids, orientation.row_kind(), path)?;
    check_unique(&col_ids, orientation.col_kind(), path)?;
    let values = DMatrix::from_row_slice(row_ids.len(), ncols, &data);
    Ok(LabeledMatrix {
        corner,
        row_ids,
        col_ids,
        values,
    })
}

pub fn read_matrix(path: &Path, orientation: Orientation) -> Result<LabeledMatrix> {
    let text = fs::read_to_string(path)?;
    parse_matrix(&text, path, orientation)
}

/// Formats with the shortest representation that parses back to the same bits.
pub fn format_matrix(m: &LabeledMatrix, delim: char) -> String {
    let mut out = String::with_capacity(m.values.len() * 20);
    out.push_str(&m.corner);
    for id in &m.col_ids {
        out.push(delim);
        out.push_str(id);
    }
    out.push('\n');
    for (i, id) in m.row_ids.iter().enumerate() {
        out.push_str(id);
        for j in 0..m.values.ncols() {
            out.push(delim);
            write!(out, "{}", m.values[(i, j)]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, m: &LabeledMatrix) -> Result<()> {
    if m.row_ids.len() != m.values.nrows() || m.col_ids.len() != m.values.ncols() {
        return Err(Error::Dimension(format!(
            "labels {}×{} do not match values {}×{}",
            m.row_ids.len(),
            m.col_ids.len(),
            m.values.nrows(),
            m.values.ncols()
        )));
    }
    fs::write(path, format_matrix(m, delimiter(path)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let m = parse_matrix("id\ta\tb\nr1\t1\t2\nr2\t3\t4\n", Path::new("m.tsv"), Orientation::FeaturesBySamples)
            .unwrap();
        assert_eq!(m.values, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(m.row_ids, ["r1", "r2"]);
        assert_eq!(m.col_ids, ["a", "b"]);
    }

    #[test]
    fn csv_by_extension() {
        let m = parse_matrix("id,a\nr1,1.5e-3\n", Path::new("m.csv"), Orientation::SamplesByCovariates).unwrap();
        assert_eq!(m.values[(0, 0)], 1.5e-3);
    }

    #[test]
    fn na_names_the_cell() {
        let e = parse_matrix("id\ta\tb\nr1\t1\tNA\n", Path::new("m.tsv"), Orientation::FeaturesBySamples)
            .unwrap_err()
            .to_string();
        assert!(e.contains("line 2") && e.contains("column 3") && e.contains("NA"), "{e}");
    }

    #[test]
    fn ragged_and_duplicates() {
        let p = Path::new("m.tsv");
        assert!(parse_matrix("id\ta\tb\nr1\t1\n", p, Orientation::FeaturesBySamples).is_err());
        assert!(parse_matrix("id\ta\tb\nr1\t1\t2\t3\n", p, Orientation::FeaturesBySamples).is_err());
        assert!(parse_matrix("id\ta\ta\nr1\t1\t2\n", p, Orientation::FeaturesBySamples).is_err());
        assert!(parse_matrix("id\ta\nr1\t1\nr1\t2\n", p, Orientation::FeaturesBySamples).is_err());
    }

    #[test]
    fn reorder() {
        let m = parse_matrix("id\ta\nr1\t1\nr2\t2\n", Path::new("m.tsv"), Orientation::SamplesByCovariates).unwrap();
        let r = m.reorder_rows(&["r2".into(), "r1".into()]).unwrap();
        assert_eq!(r.values[(0, 0)], 2.0);
        assert!(m.reorder_rows(&["r2".into(), "r3".into()]).is_err());
    }
}

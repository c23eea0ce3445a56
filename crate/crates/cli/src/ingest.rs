//! CSV input and output.
//!
//! Data files hold one sample per row. A header row is optional and is
//! recognised as a first row that does not parse as numbers. Variables are
//! assigned by a column-group string `a:b,c:d,..` of half-open column ranges.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use dhsic::{Dataset, Matrix};

use crate::error::CliError;

/// A parsed numeric table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
    pub cols: usize,
}

fn parse_row(record: &csv::StringRecord) -> Option<Vec<f64>> {
    record
        .iter()
        .map(|f| f.trim().parse::<f64>().ok())
        .collect()
}

pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut header = None;
    let mut rows = Vec::new();
    let mut cols = None;
    for (line, record) in reader.records().enumerate() {
        let record = record
            .map_err(|e| CliError::Usage(format!("{}: malformed CSV: {e}", path.display())))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        match parse_row(&record) {
            Some(values) => {
                if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                    return Err(CliError::Usage(format!(
                        "{}: line {}: non-finite value {bad}",
                        path.display(),
                        line + 1
                    )));
                }
                if *cols.get_or_insert(values.len()) != values.len() {
                    return Err(CliError::Usage(format!(
                        "{}: line {}: expected {} fields, got {}",
                        path.display(),
                        line + 1,
                        cols.unwrap(),
                        values.len()
                    )));
                }
                rows.push(values);
            }
            None if line == 0 => {
                header = Some(record.iter().map(str::to_string).collect());
                cols = Some(record.len());
            }
            None => {
                return Err(CliError::Usage(format!(
                    "{}: line {}: field is not a real number",
                    path.display(),
                    line + 1
                )))
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{}: no data rows", path.display())));
    }
    Ok(Table {
        header,
        rows,
        cols: cols.unwrap_or(0),
    })
}

/// Parses `"a:b,c:d"` into half-open column ranges.
pub fn parse_column_groups(spec: &str, total_cols: usize) -> Result<Vec<Range<usize>>, CliError> {
    let bad = |msg: String| CliError::Usage(format!("--vars '{spec}': {msg}"));
    let groups = spec
        .split(',')
        .map(|g| {
            let (a, b) = g
                .trim()
                .split_once(':')
                .ok_or_else(|| bad(format!("group '{g}' is not of the form a:b")))?;
            let a: usize = a.trim().parse().map_err(|_| bad(format!("bad start '{a}'")))?;
            let b: usize = b.trim().parse().map_err(|_| bad(format!("bad end '{b}'")))?;
            if a >= b {
                return Err(bad(format!("empty range {a}:{b}")));
            }
            if b > total_cols {
                return Err(bad(format!("range {a}:{b} exceeds {total_cols} columns")));
            }
            Ok(a..b)
        })
        .collect::<Result<Vec<_>, _>>()?;
    if groups.len() < 2 {
        return Err(bad("need at least two variables".into()));
    }
    Ok(groups)
}

/// One variable per column.
pub fn default_groups(cols: usize) -> Vec<Range<usize>> {
    (0..cols).map(|c| c..c + 1).collect()
}

pub fn table_to_dataset(table: &Table, groups: &[Range<usize>]) -> Result<Dataset, CliError> {
    let n = table.rows.len();
    let blocks = groups
        .iter()
        .map(|g| {
            let data = table
                .rows
                .iter()
                .flat_map(|row| row[g.clone()].iter().copied())
                .collect();
            Matrix::new(n, g.len(), data)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new(blocks)?)
}

/// Reads an `n x n` Gram matrix.
pub fn read_gram(path: &Path) -> Result<Matrix, CliError> {
    let table = read_table(path)?;
    if table.header.is_some() {
        return Err(CliError::Usage(format!("{}: Gram files take no header", path.display())));
    }
    let n = table.rows.len();
    let data: Vec<f64> = table.rows.into_iter().flatten().collect();
    Ok(Matrix::new(n, table.cols, data)?)
}

/// Column-group string matching [`write_dataset`]'s layout.
pub fn groups_string(data: &Dataset) -> String {
    let mut start = 0;
    data.dims()
        .iter()
        .map(|m| {
            let g = format!("{start}:{}", start + m);
            start += m;
            g
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// Writes a dataset with a `x<var>_<col>` header; values use shortest
/// round-trip formatting so re-reading is lossless.
pub fn write_dataset(data: &Dataset, path: &Path) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<String> = data
        .dims()
        .iter()
        .enumerate()
        .flat_map(|(j, &m)| (1..=m).map(move |c| format!("x{}_{c}", j + 1)))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for i in 0..data.n() {
        let row: Vec<String> = data
            .blocks()
            .iter()
            .flat_map(|b| b.row(i).iter().map(|v| format!("{v:?}")))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

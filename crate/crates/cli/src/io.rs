//! CSV ingestion and emission.
//!
//! Datasets carry a header `t,u_1,..,u_m,y_1,..,y_p`; output-only streams
//! omit the `u_` columns. Rows are taken in file order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use uie_core::estimator::Estimate;
use uie_core::IoTrajectory;

use crate::CliError;

/// Columns of a parsed CSV file, grouped by prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub t: Vec<usize>,
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub n_u: usize,
    pub n_y: usize,
}

fn column_index(name: &str, prefix: &str) -> Option<usize> {
    name.strip_prefix(prefix)?.parse::<usize>().ok().filter(|&i| i >= 1)
}

/// Parses a `t,u_..,y_..` file. Either group may be absent.
pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    read_table_from(file, &path.display().to_string())
}

pub fn read_table_from<R: std::io::Read>(reader: R, label: &str) -> Result<Table, CliError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Format(format!("{label}: {e}")))?
        .clone();
    let mut t_col = None;
    let mut u_cols = Vec::new();
    let mut y_cols = Vec::new();
    for (j, h) in headers.iter().enumerate() {
        if h == "t" {
            t_col = Some(j);
        } else if let Some(i) = column_index(h, "u_") {
            u_cols.push((i, j));
        } else if let Some(i) = column_index(h, "y_") {
            y_cols.push((i, j));
        } else {
            return Err(CliError::Format(format!("{label}: unexpected column '{h}'")));
        }
    }
    let t_col = t_col.ok_or_else(|| CliError::Format(format!("{label}: missing 't' column")))?;
    for (name, cols) in [("u", &mut u_cols), ("y", &mut y_cols)] {
        cols.sort_unstable();
        if cols.iter().enumerate().any(|(k, &(i, _))| i != k + 1) {
            return Err(CliError::Format(format!("{label}: {name}_ columns must be numbered 1..n without gaps")));
        }
    }
    let mut table = Table {
        t: Vec::new(),
        u: Vec::new(),
        y: Vec::new(),
        n_u: u_cols.len(),
        n_y: y_cols.len(),
    };
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Format(format!("{label}: {e}")))?;
        let field = |j: usize| -> Result<f64, CliError> {
            let s = rec.get(j).unwrap_or("");
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Format(format!("{label}: row {}: '{s}' is not a finite number", row + 2)))
        };
        let t = field(t_col)?;
        if t < 0.0 || t.fract() != 0.0 {
            return Err(CliError::Format(format!("{label}: row {}: time step must be a non-negative integer", row + 2)));
        }
        table.t.push(t as usize);
        let u: Result<Vec<f64>, _> = u_cols.iter().map(|&(_, j)| field(j)).collect();
        let y: Result<Vec<f64>, _> = y_cols.iter().map(|&(_, j)| field(j)).collect();
        table.u.push(DVector::from_vec(u?));
        table.y.push(DVector::from_vec(y?));
    }
    if table.t.is_empty() {
        return Err(CliError::Format(format!("{label}: no data rows")));
    }
    Ok(table)
}

/// Reads a dataset with both input and output columns.
pub fn read_dataset(path: &Path) -> Result<IoTrajectory, CliError> {
    let table = read_table(path)?;
    if table.n_u == 0 || table.n_y == 0 {
        return Err(CliError::Format(format!("{}: a dataset needs both u_ and y_ columns", path.display())));
    }
    IoTrajectory::new(table.u, table.y).map_err(|e| CliError::Format(e.to_string()))
}

fn create(path: &Path) -> Result<File, CliError> {
    File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

pub fn write_dataset(path: &Path, data: &IoTrajectory) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["t".to_string()];
    header.extend((1..=data.n_u()).map(|i| format!("u_{i}")));
    header.extend((1..=data.n_y()).map(|i| format!("y_{i}")));
    w.write_record(&header).map_err(io_err)?;
    for (t, (u, y)) in data.inputs().iter().zip(data.outputs()).enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(u.iter().chain(y.iter()).map(|v| v.to_string()));
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Writes `t,y_..` rows.
pub fn write_outputs(path: &Path, outputs: &[DVector<f64>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let n_y = outputs.first().map_or(0, |y| y.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n_y).map(|i| format!("y_{i}")));
    w.write_record(&header).map_err(io_err)?;
    for (t, y) in outputs.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(y.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Estimates as `t,uhat_..`, plus `u_true_..,err` when the truth covers `t`.
pub fn write_estimates<W: Write>(
    out: W,
    n_u: usize,
    estimates: &[Estimate],
    truth: Option<&BTreeMap<usize, DVector<f64>>>,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n_u).map(|i| format!("uhat_{i}")));
    if truth.is_some() {
        header.extend((1..=n_u).map(|i| format!("u_true_{i}")));
        header.push("err".into());
    }
    w.write_record(&header).map_err(io_err)?;
    for e in estimates {
        let mut rec = vec![e.t.to_string()];
        rec.extend(e.u_hat.iter().map(|v| v.to_string()));
        if let Some(truth) = truth {
            match truth.get(&e.t) {
                Some(u) => {
                    rec.extend(u.iter().map(|v| v.to_string()));
                    rec.push((&e.u_hat - u).amax().to_string());
                }
                None => rec.extend(std::iter::repeat_n(String::new(), n_u + 1)),
            }
        }
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Per-step error curve `t,err`.
pub fn write_error_curve(path: &Path, errors: &[(usize, f64)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["t", "err"]).map_err(io_err)?;
    for (t, e) in errors {
        w.write_record([t.to_string(), e.to_string()]).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

//! CSV dataset loading/saving and the synthetic ground-truth sidecar.
//!
//! Format: UTF-8, comma separated, header row, "." decimal. Columns named
//! `t` and `y` (case-insensitive) are treatment and outcome; everything else
//! is a covariate. Floats are written in shortest round-trip form, so
//! `load(save(dataset))` reproduces the dataset exactly.
//!
//! The sidecar carries the planted confounder and true ATE of a synthetic
//! dataset. It is a separate file precisely so that nothing model- or
//! generator-visible ever contains them.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use vigor_core::dataset::{Dataset, DatasetError};
use vigor_core::matrix::Matrix;
use vigor_core::synth::SyntheticSpec;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv parse error: {0}")]
    Parse(#[from] csv::Error),
    #[error("header is missing column {0:?}")]
    MissingColumn(&'static str),
    #[error("rows with missing values: {rows:?}")]
    MissingValues { rows: Vec<usize> },
    #[error("row {row}, column {column:?}: cannot parse {value:?} as a number")]
    BadNumber { row: usize, column: String, value: String },
    #[error(transparent)]
    Schema(#[from] DatasetError),
    #[error("sidecar error: {0}")]
    Sidecar(String),
    #[error("u column {0:?} not found among covariates")]
    UColumnNotFound(String),
}

fn io_err(path: &Path, source: std::io::Error) -> CsvError {
    CsvError::Io { path: path.display().to_string(), source }
}

/// Loads a Twins-schema CSV. `t`/`y` are matched case-insensitively; rows
/// with any empty field are rejected together with their 1-based data row
/// numbers, and ragged rows surface the csv reader's positional error.
pub fn load_csv(path: &Path) -> Result<Dataset, CsvError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(CsvError::Parse)?;

    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let t_idx = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("t"))
        .ok_or(CsvError::MissingColumn("t"))?;
    let y_idx = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("y"))
        .ok_or(CsvError::MissingColumn("y"))?;
    let cov_idx: Vec<usize> = (0..headers.len()).filter(|&i| i != t_idx && i != y_idx).collect();
    let column_names: Vec<String> = cov_idx.iter().map(|&i| headers[i].clone()).collect();

    let mut x_rows: Vec<Vec<f64>> = Vec::new();
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut missing_rows = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_no + 1;
        if record.iter().any(|f| f.is_empty()) {
            missing_rows.push(row);
            continue;
        }
        let parse = |i: usize| -> Result<f64, CsvError> {
            record[i].parse::<f64>().map_err(|_| CsvError::BadNumber {
                row,
                column: headers[i].clone(),
                value: record[i].to_string(),
            })
        };
        t.push(parse(t_idx)?);
        y.push(parse(y_idx)?);
        let mut xs = Vec::with_capacity(cov_idx.len());
        for &i in &cov_idx {
            xs.push(parse(i)?);
        }
        x_rows.push(xs);
    }
    if !missing_rows.is_empty() {
        return Err(CsvError::MissingValues { rows: missing_rows });
    }
    let x = Matrix::from_rows(&x_rows);
    Ok(Dataset::new(x, t, y, column_names)?)
}

/// Writes the dataset as covariates followed by `t` and `y`. `u_star` and
/// `true_ate` are never written here; use [`save_sidecar`].
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<(), CsvError> {
    let mut out = String::new();
    for name in &dataset.column_names {
        out.push_str(name);
        out.push(',');
    }
    out.push_str("t,y\n");
    for r in 0..dataset.len() {
        for v in dataset.x.row(r) {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{},{}\n", dataset.t[r], dataset.y[r]));
    }
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Ground-truth sidecar for synthetic datasets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub spec: SyntheticSpec,
    pub u_star: Vec<f64>,
    pub true_ate: f64,
}

pub fn save_sidecar(sidecar: &Sidecar, path: &Path) -> Result<(), CsvError> {
    let json = serde_json::to_string_pretty(sidecar)
        .map_err(|e| CsvError::Sidecar(e.to_string()))?;
    fs::write(path, json).map_err(|e| io_err(path, e))
}

pub fn load_sidecar(path: &Path) -> Result<Sidecar, CsvError> {
    let raw = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&raw).map_err(|e| CsvError::Sidecar(e.to_string()))
}

/// Moves the named covariate column out of `x` into `u_hat`, so a stored
/// candidate confounder can be validated without also acting as a covariate.
pub fn extract_u_column(dataset: &Dataset, name: &str) -> Result<Dataset, CsvError> {
    let idx = dataset
        .column_names
        .iter()
        .position(|c| c.eq_ignore_ascii_case(name))
        .ok_or_else(|| CsvError::UColumnNotFound(name.to_string()))?;
    let n = dataset.len();
    let keep: Vec<usize> = (0..dataset.num_covariates()).filter(|&c| c != idx).collect();
    let mut x = Matrix::zeros(n, keep.len());
    for r in 0..n {
        for (dst, &src) in keep.iter().enumerate() {
            x.set(r, dst, dataset.x.get(r, src));
        }
    }
    let names: Vec<String> = keep.iter().map(|&c| dataset.column_names[c].clone()).collect();
    let u = dataset.x.col_vec(idx);
    let mut out = Dataset::new(x, dataset.t.clone(), dataset.y.clone(), names)?;
    out.u_hat = Some(u);
    out.u_star = dataset.u_star.clone();
    out.true_ate = dataset.true_ate;
    Ok(out)
}

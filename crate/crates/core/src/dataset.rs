//! The in-memory observational dataset and split management.
//!
//! A [`Dataset`] holds raw covariates; standardization happens when data is
//! prepared for the model (see [`crate::cevae::ModelInput`]), which keeps
//! save/load round-trips exact. `u_star` and `true_ate` are synthetic ground
//! truth for acceptance checks and must never reach model- or
//! generator-visible artifacts.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetError {
    LengthMismatch {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    NonBinary {
        column: &'static str,
        row: usize,
        value: f64,
    },
    DuplicateColumn(String),
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LengthMismatch { field, expected, got } => {
                write!(f, "{field} has length {got}, expected {expected}")
            }
            Self::NonBinary { column, row, value } => {
                write!(f, "column {column} has non-binary value {value} at row {row}")
            }
            Self::DuplicateColumn(name) => write!(f, "duplicate covariate column {name}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for DatasetError {}

/// Observational data: covariates `x`, binary treatment `t`, binary outcome
/// `y`, plus optional candidate confounder and synthetic ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Matrix,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub column_names: Vec<String>,
    pub u_hat: Option<Vec<f64>>,
    /// Planted confounder; synthetic benchmarks only, never model-visible.
    pub u_star: Option<Vec<f64>>,
    /// Ground-truth treatment effect; synthetic benchmarks only.
    pub true_ate: Option<f64>,
}

impl Dataset {
    pub fn new(
        x: Matrix,
        t: Vec<f64>,
        y: Vec<f64>,
        column_names: Vec<String>,
    ) -> Result<Self, DatasetError> {
        let n = x.rows();
        if t.len() != n {
            return Err(DatasetError::LengthMismatch { field: "t", expected: n, got: t.len() });
        }
        if y.len() != n {
            return Err(DatasetError::LengthMismatch { field: "y", expected: n, got: y.len() });
        }
        if column_names.len() != x.cols() {
            return Err(DatasetError::LengthMismatch {
                field: "column_names",
                expected: x.cols(),
                got: column_names.len(),
            });
        }
        for (row, &v) in t.iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                return Err(DatasetError::NonBinary { column: "t", row, value: v });
            }
        }
        for (row, &v) in y.iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                return Err(DatasetError::NonBinary { column: "y", row, value: v });
            }
        }
        for (i, name) in column_names.iter().enumerate() {
            if column_names[..i].contains(name) {
                return Err(DatasetError::DuplicateColumn(name.clone()));
            }
        }
        Ok(Self {
            x,
            t,
            y,
            column_names,
            u_hat: None,
            u_star: None,
            true_ate: None,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_covariates(&self) -> usize {
        self.x.cols()
    }

    /// Unadjusted group-mean difference `E[Y|T=1] − E[Y|T=0]`.
    ///
    /// Returns `None` when either group is empty.
    pub fn naive_ate(&self) -> Option<f64> {
        let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
        for (&t, &y) in self.t.iter().zip(&self.y) {
            if t == 1.0 {
                s1 += y;
                n1 += 1;
            } else {
                s0 += y;
                n0 += 1;
            }
        }
        if n1 == 0 || n0 == 0 {
            return None;
        }
        Some(s1 / n1 as f64 - s0 / n0 as f64)
    }

    /// Copies the listed rows into a new dataset.
    pub fn select(&self, indices: &[usize]) -> Self {
        let gather = |v: &[f64]| indices.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        Self {
            x: self.x.select_rows(indices),
            t: gather(&self.t),
            y: gather(&self.y),
            column_names: self.column_names.clone(),
            u_hat: self.u_hat.as_deref().map(gather),
            u_star: self.u_star.as_deref().map(gather),
            true_ate: self.true_ate,
        }
    }
}

/// Disjoint, exhaustive train/eval row indices, stratified on treatment so
/// both splits keep approximately the same treatment rate.
///
/// Returned indices are sorted, so each split preserves original row order.
pub fn split_indices(
    t: &[f64],
    eval_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    assert!((0.0..1.0).contains(&eval_fraction), "eval fraction must be in [0,1)");
    let n = t.len();
    let mut treated: Vec<usize> = (0..n).filter(|&i| t[i] == 1.0).collect();
    let mut control: Vec<usize> = (0..n).filter(|&i| t[i] != 1.0).collect();
    let mut rng = rng::seeded(seed);
    let perm_t = rng::shuffled_indices(treated.len(), &mut rng);
    let perm_c = rng::shuffled_indices(control.len(), &mut rng);
    treated = perm_t.iter().map(|&i| treated[i]).collect();
    control = perm_c.iter().map(|&i| control[i]).collect();

    let n_eval = (eval_fraction * n as f64 + 0.5) as usize;
    let mut n_eval_t = (eval_fraction * treated.len() as f64 + 0.5) as usize;
    n_eval_t = n_eval_t.min(n_eval).min(treated.len());
    let n_eval_c = (n_eval - n_eval_t).min(control.len());

    let mut eval: Vec<usize> = treated[..n_eval_t]
        .iter()
        .chain(&control[..n_eval_c])
        .copied()
        .collect();
    let mut train: Vec<usize> = treated[n_eval_t..]
        .iter()
        .chain(&control[n_eval_c..])
        .copied()
        .collect();
    eval.sort_unstable();
    train.sort_unstable();
    (train, eval)
}

/// Splits a dataset into `(train, eval)` with `eval_fraction` of rows held out.
pub fn split(dataset: &Dataset, eval_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let (train_idx, eval_idx) = split_indices(&dataset.t, eval_fraction, seed);
    (dataset.select(&train_idx), dataset.select(&eval_idx))
}

/// Column means and population standard deviations of a matrix.
pub fn column_stats(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows().max(1) as f64;
    let d = x.cols();
    let mut means = alloc::vec![0.0; d];
    for r in 0..x.rows() {
        for (m, &v) in means.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut stds = alloc::vec![0.0; d];
    for r in 0..x.rows() {
        for (j, &v) in x.row(r).iter().enumerate() {
            let dlt = v - means[j];
            stds[j] += dlt * dlt;
        }
    }
    for s in &mut stds {
        *s = crate::fmath::sqrt(*s / n);
    }
    (means, stds)
}

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column autoscaling parameters, frozen after fitting on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// Columns with zero variance in the fitting data; their scale is 1.
    pub constant: Vec<bool>,
}

impl Scaling {
    pub fn fit(x: &DMatrix<f64>) -> Result<Scaling> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "autoscaling needs at least 2 rows, got {n}"
            )));
        }
        let mut means = Vec::with_capacity(x.ncols());
        let mut scales = Vec::with_capacity(x.ncols());
        let mut constant = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.mean();
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            let flat = sd == 0.0 || sd <= 1e-12 * m.abs();
            means.push(m);
            scales.push(if flat { 1.0 } else { sd });
            constant.push(flat);
        }
        Ok(Scaling {
            means,
            scales,
            constant,
        })
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.means.len() {
            return Err(Error::Shape {
                expected: self.means.len(),
                got: x.ncols(),
            });
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            let v = x[(i, j)] - self.means[j];
            // flat columns map to exact zeros regardless of rounding in the mean
            if self.constant[j] && v.abs() <= 1e-12 * self.means[j].abs() {
                0.0
            } else {
                v / self.scales[j]
            }
        }))
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<DVector<f64>> {
        let m = DMatrix::from_row_slice(1, row.len(), row);
        Ok(self.apply(&m)?.row(0).transpose())
    }

    pub fn n_constant(&self) -> usize {
        self.constant.iter().filter(|c| **c).count()
    }
}

/// Autoscale `x`, fitting parameters when none are given.
pub fn standardize(x: &DMatrix<f64>, params: Option<&Scaling>) -> Result<(DMatrix<f64>, Scaling)> {
    let params = match params {
        Some(p) => p.clone(),
        None => Scaling::fit(x)?,
    };
    Ok((params.apply(x)?, params))
}

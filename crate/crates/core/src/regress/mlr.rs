use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Least squares through the SVD, refusing ill-conditioned designs.
///
/// Returns the coefficients and the 2-norm condition number of `x`.
pub(crate) fn solve_least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    condition_limit: f64,
) -> Result<(DVector<f64>, f64)> {
    if x.nrows() <= x.ncols() {
        return Err(Error::Sizing(format!(
            "least squares needs more rows than columns, got {}×{}",
            x.nrows(),
            x.ncols()
        )));
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= condition_limit) {
        return Err(Error::Collinearity { condition });
    }
    let beta = svd
        .solve(y, 0.0)
        .map_err(|e| Error::Precondition(e.to_string()))?;
    Ok((beta, condition))
}

use nalgebra::{DMatrix, DVector};

use super::{Component, InnerRelation};
use crate::error::{Error, Result};

const MAX_ITER: usize = 500;
const TOL: f64 = 1e-10;
/// Residual X (relative Frobenius norm) below which X is exhausted.
const EXHAUSTED: f64 = 1e-9;

pub(crate) struct Extraction {
    pub components: Vec<Component>,
    pub explained_x: Vec<f64>,
    pub explained_y: Vec<f64>,
}

/// Sequential NIPALS extraction on scaled `x`, `y`.
///
/// `inner` maps (component index, scores t, current y residual) to the
/// inner relation; its fitted values deflate y.
pub(crate) fn nipals(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    n_lv: usize,
    mut inner: impl FnMut(usize, &DVector<f64>, &DVector<f64>) -> Result<InnerRelation>,
) -> Result<Extraction> {
    let x_total = x.norm_squared();
    let y_total = y.norm_squared();
    let mut xr = x.clone();
    let mut yr = y.clone();
    let mut out = Extraction {
        components: Vec::with_capacity(n_lv),
        explained_x: Vec::new(),
        explained_y: Vec::new(),
    };

    for a in 0..n_lv {
        if xr.norm_squared() <= EXHAUSTED * EXHAUSTED * x_total {
            break;
        }
        // With one response u stays proportional to the y residual. Dividing
        // by q would flip w whenever rounding makes q negative.
        let u = yr.clone();
        let mut w = DVector::zeros(x.ncols());
        let mut converged = false;
        for _ in 0..MAX_ITER {
            let mut w_new = xr.tr_mul(&u);
            let nw = w_new.norm();
            if nw <= 1e-14 * (x_total * y_total).sqrt() {
                // y residual carries nothing X can explain
                return Ok(out);
            }
            w_new /= nw;
            let delta = (&w_new - &w).norm();
            w = w_new;
            if delta <= TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Convergence { component: a + 1 });
        }

        let t = &xr * &w;
        let tt = t.norm_squared();
        let p = xr.tr_mul(&t) / tt;
        let relation = inner(a, &t, &yr)?;
        let fitted = relation.eval_vec(&t);

        let y_before = yr.norm_squared();
        xr -= &t * p.transpose();
        yr -= fitted;
        out.explained_x.push((tt * p.norm_squared() / x_total).clamp(0.0, 1.0));
        out.explained_y
            .push(((y_before - yr.norm_squared()) / y_total).clamp(0.0, 1.0));
        out.components.push(Component {
            weights: w.as_slice().to_vec(),
            loadings: p.as_slice().to_vec(),
            inner: relation,
        });
    }
    Ok(out)
}

/// Principal components of scaled `x` with least-squares score coefficients.
pub(crate) fn principal_components(x: &DMatrix<f64>, y: &DVector<f64>, n: usize) -> Result<Extraction> {
    let x_total = x.norm_squared();
    let y_total = y.norm_squared();
    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    // nalgebra does not promise sorted singular values
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));

    let mut xr = x.clone();
    let mut yr = y.clone();
    let mut out = Extraction {
        components: Vec::with_capacity(n),
        explained_x: Vec::new(),
        explained_y: Vec::new(),
    };
    for &k in order.iter().take(n) {
        if xr.norm_squared() <= EXHAUSTED * EXHAUSTED * x_total {
            break;
        }
        let mut w: DVector<f64> = v_t.row(k).transpose();
        // sign: largest-magnitude weight positive
        let imax = w.iamax();
        if w[imax] < 0.0 {
            w = -w;
        }
        let t = &xr * &w;
        let tt = t.norm_squared();
        let p = xr.tr_mul(&t) / tt;
        let b = yr.dot(&t) / tt;
        let y_before = yr.norm_squared();
        xr -= &t * p.transpose();
        yr -= &t * b;
        out.explained_x.push((tt * p.norm_squared() / x_total).clamp(0.0, 1.0));
        out.explained_y
            .push(((y_before - yr.norm_squared()) / y_total.max(f64::MIN_POSITIVE)).clamp(0.0, 1.0));
        out.components.push(Component {
            weights: w.as_slice().to_vec(),
            loadings: p.as_slice().to_vec(),
            inner: InnerRelation::Linear(b),
        });
    }
    Ok(out)
}

/// Least-squares polynomial `u ≈ Σ cₖ (t/s)ᵏ`, with `s` the score scale.
pub(crate) fn fit_polynomial(t: &DVector<f64>, u: &DVector<f64>, degree: usize) -> InnerRelation {
    let s = (t.norm_squared() / t.len() as f64).sqrt().max(f64::MIN_POSITIVE);
    let v = DMatrix::from_fn(t.len(), degree + 1, |i, k| (t[i] / s).powi(k as i32));
    let coefficients = v
        .svd(true, true)
        .solve(u, 1e-12)
        .map(|c| c.as_slice().to_vec())
        .unwrap_or_else(|_| vec![0.0; degree + 1]);
    InnerRelation::Polynomial {
        coefficients,
        scale: s,
    }
}

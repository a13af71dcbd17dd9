//! Regression family: MLR, PCR, linear PLS (NIPALS), polynomial PLS and
//! neural-network PLS, all single-target.

mod mlr;
mod network;
mod nipals;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use network::{nn_inner_gradient, train_network, Network, NnConfig};

use crate::error::{Error, Result};
use crate::pretreat::Scaling;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Technique {
    #[serde(rename = "MLR")]
    Mlr,
    #[serde(rename = "PCR")]
    Pcr,
    #[serde(rename = "LinearPLS")]
    LinearPls,
    #[serde(rename = "PolyPLS")]
    PolyPls,
    #[serde(rename = "NNPLS")]
    Nnpls,
}

impl Technique {
    pub const ALL: [Technique; 5] = [
        Technique::Mlr,
        Technique::Pcr,
        Technique::LinearPls,
        Technique::PolyPls,
        Technique::Nnpls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Technique::Mlr => "MLR",
            Technique::Pcr => "PCR",
            Technique::LinearPls => "LinearPLS",
            Technique::PolyPls => "PolyPLS",
            Technique::Nnpls => "NNPLS",
        }
    }

    pub fn is_latent(self) -> bool {
        self != Technique::Mlr
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Technique {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Technique::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Key {
                key: s.into(),
                valid: Technique::ALL.map(Technique::name).join(", "),
            })
    }
}

/// Technique hyperparameters other than the component count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub poly_degree: usize,
    pub nn: NnConfig,
    pub mlr_condition_limit: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            poly_degree: 2,
            nn: NnConfig::default(),
            mlr_condition_limit: 1e10,
        }
    }
}

/// Per-component map from X score `t` to the y contribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum InnerRelation {
    Linear(f64),
    Polynomial { coefficients: Vec<f64>, scale: f64 },
    Network(Network),
}

impl InnerRelation {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            InnerRelation::Linear(b) => b * t,
            InnerRelation::Polynomial {
                coefficients,
                scale,
            } => {
                let z = t / scale;
                coefficients.iter().rev().fold(0.0, |acc, c| acc * z + c)
            }
            InnerRelation::Network(net) => net.eval(t),
        }
    }

    pub fn eval_vec(&self, t: &DVector<f64>) -> DVector<f64> {
        t.map(|v| self.eval(v))
    }
}

/// One latent component: weight vector, X loading and inner relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weights: Vec<f64>,
    pub loadings: Vec<f64>,
    pub inner: InnerRelation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub technique: Technique,
    pub x_scaling: Scaling,
    pub y_mean: f64,
    pub y_scale: f64,
    pub components: Vec<Component>,
    /// Coefficients in scaled space (MLR only).
    pub mlr_coefficients: Option<Vec<f64>>,
    /// 2-norm condition number of scaled X (MLR only).
    pub condition: Option<f64>,
    pub explained_x: Vec<f64>,
    pub explained_y: Vec<f64>,
}

impl RegressionModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn n_features(&self) -> usize {
        self.x_scaling.means.len()
    }

    /// Predictions using only the first `n` components.
    pub fn predict_prefix(&self, x: &DMatrix<f64>, n: usize) -> Result<DVector<f64>> {
        let mut xr = self.x_scaling.apply(x)?;
        let mut y = DVector::zeros(x.nrows());
        if let Some(beta) = &self.mlr_coefficients {
            y = &xr * DVector::from_column_slice(beta);
        } else {
            for c in self.components.iter().take(n) {
                let w = DVector::from_column_slice(&c.weights);
                let p = DVector::from_column_slice(&c.loadings);
                let t = &xr * w;
                y += c.inner.eval_vec(&t);
                xr -= &t * p.transpose();
            }
        }
        Ok(y.map(|v| v * self.y_scale + self.y_mean))
    }

    /// X scores, one column per component.
    pub fn scores(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut xr = self.x_scaling.apply(x)?;
        let mut out = DMatrix::zeros(x.nrows(), self.components.len());
        for (a, c) in self.components.iter().enumerate() {
            let t = &xr * DVector::from_column_slice(&c.weights);
            xr -= &t * DVector::from_column_slice(&c.loadings).transpose();
            out.set_column(a, &t);
        }
        Ok(out)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.predict_prefix(x, self.components.len())
    }

    /// Intercept and per-feature coefficients in original units (MLR only).
    pub fn raw_coefficients(&self) -> Option<(f64, Vec<f64>)> {
        let beta = self.mlr_coefficients.as_ref()?;
        let s = &self.x_scaling;
        let coef: Vec<f64> = beta
            .iter()
            .enumerate()
            .map(|(j, b)| b * self.y_scale / s.scales[j])
            .collect();
        let intercept = self.y_mean - coef.iter().zip(&s.means).map(|(c, m)| c * m).sum::<f64>();
        Some((intercept, coef))
    }
}

pub fn predict(model: &RegressionModel, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    model.predict(x)
}

pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::Shape {
            expected: actual.len(),
            got: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::InsufficientData("rmse of empty vectors".into()));
    }
    let ss: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum();
    Ok((ss / actual.len() as f64).sqrt())
}

struct Prepared {
    xs: DMatrix<f64>,
    ys: DVector<f64>,
    x_scaling: Scaling,
    y_mean: f64,
    y_scale: f64,
}

fn prepare(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Prepared> {
    if x.nrows() != y.len() {
        return Err(Error::Shape {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let x_scaling = Scaling::fit(x)?;
    let xs = x_scaling.apply(x)?;
    let y_scaling = Scaling::fit(&DMatrix::from_column_slice(y.len(), 1, y.as_slice()))?;
    if y_scaling.constant[0] {
        return Err(Error::DegenerateTarget);
    }
    let (y_mean, y_scale) = (y_scaling.means[0], y_scaling.scales[0]);
    let ys = y.map(|v| (v - y_mean) / y_scale);
    Ok(Prepared {
        xs,
        ys,
        x_scaling,
        y_mean,
        y_scale,
    })
}

/// Largest admissible component count for an `rows × cols` training X.
pub fn max_components(rows: usize, cols: usize) -> usize {
    rows.saturating_sub(1).min(cols)
}

fn check_components(x: &DMatrix<f64>, n: usize) -> Result<()> {
    let bound = max_components(x.nrows(), x.ncols());
    if n == 0 || n > bound {
        return Err(Error::Sizing(format!(
            "{n} components requested, admissible range is 1..={bound} for {}×{} X",
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(())
}

fn latent_model(technique: Technique, p: Prepared, e: nipals::Extraction) -> RegressionModel {
    RegressionModel {
        technique,
        x_scaling: p.x_scaling,
        y_mean: p.y_mean,
        y_scale: p.y_scale,
        components: e.components,
        mlr_coefficients: None,
        condition: None,
        explained_x: e.explained_x,
        explained_y: e.explained_y,
    }
}

pub fn fit_mlr(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<RegressionModel> {
    fit_mlr_with(x, y, FitConfig::default().mlr_condition_limit)
}

pub fn fit_mlr_with(x: &DMatrix<f64>, y: &DVector<f64>, condition_limit: f64) -> Result<RegressionModel> {
    let p = prepare(x, y)?;
    let (beta, condition) = mlr::solve_least_squares(&p.xs, &p.ys, condition_limit)?;
    let resid = &p.ys - &p.xs * &beta;
    Ok(RegressionModel {
        technique: Technique::Mlr,
        x_scaling: p.x_scaling,
        y_mean: p.y_mean,
        y_scale: p.y_scale,
        components: Vec::new(),
        mlr_coefficients: Some(beta.as_slice().to_vec()),
        condition: Some(condition),
        explained_x: Vec::new(),
        explained_y: vec![(1.0 - resid.norm_squared() / p.ys.norm_squared()).clamp(0.0, 1.0)],
    })
}

pub fn fit_pcr(x: &DMatrix<f64>, y: &DVector<f64>, n_components: usize) -> Result<RegressionModel> {
    check_components(x, n_components)?;
    let p = prepare(x, y)?;
    let e = nipals::principal_components(&p.xs, &p.ys, n_components)?;
    Ok(latent_model(Technique::Pcr, p, e))
}

pub fn fit_pls(x: &DMatrix<f64>, y: &DVector<f64>, n_lv: usize) -> Result<RegressionModel> {
    check_components(x, n_lv)?;
    let p = prepare(x, y)?;
    let e = nipals::nipals(&p.xs, &p.ys, n_lv, |_, t, u| {
        Ok(InnerRelation::Linear(u.dot(t) / t.norm_squared()))
    })?;
    Ok(latent_model(Technique::LinearPls, p, e))
}

pub fn fit_polypls(x: &DMatrix<f64>, y: &DVector<f64>, n_lv: usize, degree: usize) -> Result<RegressionModel> {
    check_components(x, n_lv)?;
    if degree == 0 {
        return Err(Error::Precondition("polynomial degree must be at least 1".into()));
    }
    let p = prepare(x, y)?;
    let e = nipals::nipals(&p.xs, &p.ys, n_lv, |_, t, u| Ok(nipals::fit_polynomial(t, u, degree)))?;
    Ok(latent_model(Technique::PolyPls, p, e))
}

pub fn fit_nnpls(x: &DMatrix<f64>, y: &DVector<f64>, n_lv: usize, config: &NnConfig) -> Result<RegressionModel> {
    check_components(x, n_lv)?;
    if config.hidden == 0 {
        return Err(Error::Precondition("network needs at least one hidden unit".into()));
    }
    let p = prepare(x, y)?;
    let e = nipals::nipals(&p.xs, &p.ys, n_lv, |a, t, u| {
        Ok(InnerRelation::Network(train_network(
            t.as_slice(),
            u.as_slice(),
            config,
            config.seed.wrapping_add(a as u64),
        )))
    })?;
    Ok(latent_model(Technique::Nnpls, p, e))
}

/// Fits `technique` with `n` components (ignored for MLR).
pub fn fit(
    technique: Technique,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    n: usize,
    config: &FitConfig,
) -> Result<RegressionModel> {
    match technique {
        Technique::Mlr => fit_mlr_with(x, y, config.mlr_condition_limit),
        Technique::Pcr => fit_pcr(x, y, n),
        Technique::LinearPls => fit_pls(x, y, n),
        Technique::PolyPls => fit_polypls(x, y, n, config.poly_degree),
        Technique::Nnpls => fit_nnpls(x, y, n, &config.nn),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub technique: Technique,
    pub n_components: usize,
    pub train_rmse: f64,
    pub validation_rmse: f64,
    pub explained_x: Vec<f64>,
    pub explained_y: Vec<f64>,
}

/// Parsimony rule: smallest candidate within 1% of the best validation RMSE.
pub fn parsimonious_choice(reports: &[FitReport]) -> Option<usize> {
    let best = reports
        .iter()
        .map(|r| r.validation_rmse)
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    reports
        .iter()
        .filter(|r| r.validation_rmse <= best * 1.01)
        .map(|r| r.n_components)
        .min()
}

/// Fits once at `max_lv` and scores every prefix on validation data.
///
/// Components are extracted sequentially, so the prefix of length `k` is
/// exactly the `k`-component model.
pub fn select_latent_dim(
    x_tr: &DMatrix<f64>,
    y_tr: &DVector<f64>,
    x_val: &DMatrix<f64>,
    y_val: &DVector<f64>,
    technique: Technique,
    max_lv: usize,
    config: &FitConfig,
) -> Result<(usize, RegressionModel, Vec<FitReport>)> {
    let model = fit(technique, x_tr, y_tr, max_lv, config)?;
    let candidates: Vec<usize> = if technique.is_latent() {
        (1..=model.n_components()).collect()
    } else {
        vec![0]
    };
    let mut reports = Vec::with_capacity(candidates.len());
    for &k in &candidates {
        let tr = model.predict_prefix(x_tr, k)?;
        let va = model.predict_prefix(x_val, k)?;
        let take = if technique.is_latent() { k } else { usize::MAX };
        reports.push(FitReport {
            technique,
            n_components: k,
            train_rmse: rmse(tr.as_slice(), y_tr.as_slice())?,
            validation_rmse: rmse(va.as_slice(), y_val.as_slice())?,
            explained_x: model.explained_x.iter().take(take).copied().collect(),
            explained_y: model.explained_y.iter().take(take).copied().collect(),
        });
    }
    let best = parsimonious_choice(&reports).ok_or_else(|| {
        Error::InsufficientData("no latent components could be extracted".into())
    })?;
    let mut model = model;
    if technique.is_latent() {
        model.components.truncate(best);
        model.explained_x.truncate(best);
        model.explained_y.truncate(best);
    }
    Ok((best, model, reports))
}

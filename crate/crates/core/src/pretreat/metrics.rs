//! Per-region summary statistics of a sensor channel.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EtchRegion, SensorTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "avg")]
    Avg,
    #[serde(rename = "sigma")]
    Sigma,
    #[serde(rename = "max")]
    Max,
    #[serde(rename = "min")]
    Min,
    #[serde(rename = "adjR2")]
    AdjR2,
    #[serde(rename = "ssr")]
    Ssr,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::Avg,
        MetricKind::Sigma,
        MetricKind::Max,
        MetricKind::Min,
        MetricKind::AdjR2,
        MetricKind::Ssr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Avg => "avg",
            MetricKind::Sigma => "sigma",
            MetricKind::Max => "max",
            MetricKind::Min => "min",
            MetricKind::AdjR2 => "adjR2",
            MetricKind::Ssr => "ssr",
        }
    }

    fn min_samples(self) -> usize {
        match self {
            MetricKind::AdjR2 | MetricKind::Ssr => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Key {
                key: s.into(),
                valid: MetricKind::ALL.map(MetricKind::name).join(", "),
            })
    }
}

/// First-order least-squares fit `value ≈ intercept + slope · time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub ssr: f64,
    pub sst: f64,
}

impl LineFit {
    pub fn new(times: &[f64], values: &[f64]) -> Self {
        let n = values.len() as f64;
        let tm = times.iter().sum::<f64>() / n;
        let vm = values.iter().sum::<f64>() / n;
        let (mut sxx, mut sxy, mut sst) = (0.0, 0.0, 0.0);
        for (t, v) in times.iter().zip(values) {
            sxx += (t - tm) * (t - tm);
            sxy += (t - tm) * (v - vm);
            sst += (v - vm) * (v - vm);
        }
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        let intercept = vm - slope * tm;
        let mut ssr: f64 = times
            .iter()
            .zip(values)
            .map(|(t, v)| {
                // centred form keeps the residual independent of time origin
                let r = (v - vm) - slope * (t - tm);
                r * r
            })
            .sum();
        // Residuals at rounding level are an exact fit.
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = 256.0 * f64::EPSILON * scale;
        if ssr <= n * floor * floor {
            ssr = 0.0;
        }
        LineFit {
            intercept,
            slope,
            ssr,
            sst,
        }
    }

    /// Adjusted R²; 0 on a zero-variance window.
    pub fn adj_r2(&self, n: usize) -> f64 {
        if self.sst <= 0.0 {
            return 0.0;
        }
        if self.ssr == 0.0 {
            return 1.0;
        }
        let r2 = 1.0 - self.ssr / self.sst;
        1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - 2.0)
    }
}

/// Metrics of the samples `(times, values)` of one window.
pub fn window_metrics(times: &[f64], values: &[f64], kinds: &[MetricKind]) -> Result<BTreeMap<MetricKind, f64>> {
    let n = values.len();
    if let Some(k) = kinds.iter().find(|k| n < k.min_samples()) {
        return Err(Error::InsufficientData(format!(
            "{k} needs at least {} samples, window has {n}",
            k.min_samples()
        )));
    }
    let mean = || values.iter().sum::<f64>() / n as f64;
    let fit = kinds
        .iter()
        .any(|k| matches!(k, MetricKind::AdjR2 | MetricKind::Ssr))
        .then(|| LineFit::new(times, values));

    let mut out = BTreeMap::new();
    for &kind in kinds {
        let v = match kind {
            MetricKind::Avg => mean(),
            MetricKind::Sigma => {
                if n < 2 {
                    0.0
                } else {
                    let m = mean();
                    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
                }
            }
            MetricKind::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            MetricKind::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            MetricKind::AdjR2 => fit.expect("fit computed").adj_r2(n),
            MetricKind::Ssr => fit.expect("fit computed").ssr,
        };
        out.insert(kind, v);
    }
    Ok(out)
}

/// Metrics of `trace` within its annotated `region` window.
pub fn extract_metrics(
    trace: &SensorTrace,
    region: EtchRegion,
    kinds: &[MetricKind],
) -> Result<BTreeMap<MetricKind, f64>> {
    let windows = trace.region_windows.ok_or_else(|| {
        Error::Segmentation(format!(
            "trace {}/{} of wafer {} has no region windows",
            trace.suite, trace.channel, trace.wafer_id
        ))
    })?;
    let (times, values) = trace.window_samples(windows.get(region));
    window_metrics(&times, &values, kinds).map_err(|e| match e {
        Error::InsufficientData(msg) => Error::InsufficientData(format!(
            "{}/{} {region} on wafer {}: {msg}",
            trace.suite, trace.channel, trace.wafer_id
        )),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Vector2};
    use proptest::prelude::*;

    /// Least squares through the 2×2 normal equations built from raw sums.
    fn normal_equation_fit(t: &[f64], v: &[f64]) -> (f64, f64, f64, f64) {
        let n = t.len() as f64;
        let (st, stt, sv, stv) = t.iter().zip(v).fold((0.0, 0.0, 0.0, 0.0), |a, (t, v)| {
            (a.0 + t, a.1 + t * t, a.2 + v, a.3 + t * v)
        });
        let sol = Matrix2::new(n, st, st, stt)
            .lu()
            .solve(&Vector2::new(sv, stv))
            .unwrap();
        let (a, b) = (sol[0], sol[1]);
        let ssr: f64 = t.iter().zip(v).map(|(t, v)| (v - a - b * t).powi(2)).sum();
        let vm = sv / n;
        let sst: f64 = v.iter().map(|v| (v - vm).powi(2)).sum();
        let adj = 1.0 - (ssr / sst) * (n - 1.0) / (n - 2.0);
        (a, b, ssr, adj)
    }

    #[test]
    fn exact_line() {
        let m = window_metrics(&[0.0, 1.0, 2.0], &[1.0, 2.0, 3.0], &MetricKind::ALL).unwrap();
        assert_eq!(m[&MetricKind::Avg], 2.0);
        assert_eq!(m[&MetricKind::Sigma], 1.0);
        assert_eq!(m[&MetricKind::Max], 3.0);
        assert_eq!(m[&MetricKind::Min], 1.0);
        assert_eq!(m[&MetricKind::AdjR2], 1.0);
        assert_eq!(m[&MetricKind::Ssr], 0.0);
    }

    #[test]
    fn constant_window_convention() {
        let m = window_metrics(&[0.0, 1.0, 2.0], &[5.0, 5.0, 5.0], &MetricKind::ALL).unwrap();
        assert_eq!(m[&MetricKind::Sigma], 0.0);
        assert_eq!(m[&MetricKind::Ssr], 0.0);
        assert_eq!(m[&MetricKind::AdjR2], 0.0);
    }

    #[test]
    fn noisy_line_matches_normal_equations() {
        let (t, v) = ([0.0, 1.0, 2.0, 3.0], [1.0, 3.0, 2.0, 4.0]);
        let (a, b, ssr, adj) = normal_equation_fit(&t, &v);
        // frozen from the oracle above
        assert!((a - 1.3).abs() < 1e-12 && (b - 0.8).abs() < 1e-12);
        assert!((ssr - 1.8).abs() < 1e-12 && (adj - 0.46).abs() < 1e-12);

        let fit = LineFit::new(&t, &v);
        assert!((fit.intercept - 1.3).abs() < 1e-12);
        assert!((fit.slope - 0.8).abs() < 1e-12);
        let m = window_metrics(&t, &v, &[MetricKind::Ssr, MetricKind::AdjR2]).unwrap();
        assert!((m[&MetricKind::Ssr] - 1.8).abs() < 1e-12);
        assert!((m[&MetricKind::AdjR2] - 0.46).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples() {
        assert!(window_metrics(&[0.0], &[1.0], &[MetricKind::Avg, MetricKind::Max]).is_ok());
        assert!(matches!(
            window_metrics(&[0.0], &[1.0], &[MetricKind::Ssr]),
            Err(Error::InsufficientData(_))
        ));
        assert!(window_metrics(&[], &[], &[MetricKind::Avg]).is_err());
    }

    proptest! {
        #[test]
        fn order_and_translation_invariance(
            values in proptest::collection::vec(-100f64..100.0, 3..30),
            shift in -1e3f64..1e3,
            rot in 0usize..30,
        ) {
            let times: Vec<f64> = (0..values.len()).map(|i| i as f64 * 0.7).collect();
            let base = window_metrics(&times, &values, &MetricKind::ALL).unwrap();

            let mut perm = values.clone();
            perm.rotate_left(rot % values.len());
            let p = window_metrics(&times, &perm, &[MetricKind::Avg, MetricKind::Max, MetricKind::Min]).unwrap();
            for k in [MetricKind::Avg, MetricKind::Max, MetricKind::Min] {
                prop_assert!((p[&k] - base[&k]).abs() <= 1e-9 * (1.0 + base[&k].abs()));
            }

            let shifted: Vec<f64> = times.iter().map(|t| t + shift).collect();
            let s = window_metrics(&shifted, &values, &[MetricKind::AdjR2, MetricKind::Ssr]).unwrap();
            for k in [MetricKind::AdjR2, MetricKind::Ssr] {
                prop_assert!((s[&k] - base[&k]).abs() <= 1e-7 * (1.0 + base[&k].abs()));
            }
        }
    }
}

//! Central composite designs and their mapping onto physical recipes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Factor, Recipe};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSpec {
    pub n_factors: usize,
    pub center: Recipe,
    /// Physical size of one coded unit, per factor.
    pub step_sizes: Vec<f64>,
    pub axial_alpha: f64,
    pub total_wafers: usize,
}

impl Default for DesignSpec {
    fn default() -> Self {
        DesignSpec {
            n_factors: 5,
            center: Recipe::new(9.0, 350.0, 150.0, 40.0, 60.0),
            step_sizes: vec![3.0, 50.0, 20.0, 8.0, 10.0],
            axial_alpha: rotatable_alpha(5),
            total_wafers: 70,
        }
    }
}

/// Rotatable axial distance `(2^k)^(1/4)`.
pub fn rotatable_alpha(n_factors: usize) -> f64 {
    (2f64.powi(n_factors as i32)).powf(0.25)
}

impl DesignSpec {
    /// Smallest wafer budget holding the factorial, axial and one center point.
    pub fn minimum_wafers(&self) -> usize {
        (1usize << self.n_factors) + 2 * self.n_factors + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_factors < 2 || self.n_factors > Factor::ALL.len() {
            return Err(Error::Sizing(format!(
                "n_factors must be in 2..=5, got {}",
                self.n_factors
            )));
        }
        if !(self.axial_alpha > 1.0) {
            return Err(Error::Sizing(format!(
                "axial_alpha must exceed 1, got {}",
                self.axial_alpha
            )));
        }
        if self.total_wafers < self.minimum_wafers() {
            return Err(Error::Sizing(format!(
                "total_wafers {} below CCD minimum {} for {} factors",
                self.total_wafers,
                self.minimum_wafers(),
                self.n_factors
            )));
        }
        if self.step_sizes.len() != self.n_factors {
            return Err(Error::Sizing(format!(
                "{} step sizes for {} factors",
                self.step_sizes.len(),
                self.n_factors
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub coded_levels: Vec<f64>,
    pub replicate_index: usize,
}

impl DesignPoint {
    pub fn is_center(&self) -> bool {
        self.coded_levels.iter().all(|&l| l == 0.0)
    }
}

/// Factorial block (standard order, first factor fastest), then axial pairs
/// (−α, +α per factor), then center replicates up to `total_wafers`.
pub fn central_composite_design(spec: &DesignSpec) -> Result<Vec<DesignPoint>> {
    spec.validate()?;
    let k = spec.n_factors;
    let mut points = Vec::with_capacity(spec.total_wafers);

    for run in 0..(1usize << k) {
        let coded_levels = (0..k)
            .map(|j| if run >> j & 1 == 1 { 1.0 } else { -1.0 })
            .collect();
        points.push(DesignPoint {
            coded_levels,
            replicate_index: 0,
        });
    }
    for j in 0..k {
        for sign in [-1.0, 1.0] {
            let mut coded_levels = vec![0.0; k];
            coded_levels[j] = sign * spec.axial_alpha;
            points.push(DesignPoint {
                coded_levels,
                replicate_index: 0,
            });
        }
    }
    let centers = spec.total_wafers - points.len();
    for replicate_index in 0..centers {
        points.push(DesignPoint {
            coded_levels: vec![0.0; k],
            replicate_index,
        });
    }
    Ok(points)
}

/// Physical recipe for each design point: `center + coded × step` per factor.
pub fn scale_design_to_recipes(points: &[DesignPoint], spec: &DesignSpec) -> Result<Vec<Recipe>> {
    spec.validate()?;
    points
        .iter()
        .map(|p| {
            if p.coded_levels.len() != spec.n_factors {
                return Err(Error::Shape {
                    expected: spec.n_factors,
                    got: p.coded_levels.len(),
                });
            }
            let mut values = spec.center.factors();
            for (j, (&level, &step)) in p.coded_levels.iter().zip(&spec.step_sizes).enumerate() {
                let factor = Factor::ALL[j];
                let v = values[j] + level * step;
                let bad = match factor {
                    Factor::Pressure => !(v > 0.0),
                    _ => !(v >= 0.0),
                };
                if bad {
                    return Err(Error::Range {
                        factor: factor.name().into(),
                        value: v,
                    });
                }
                values[j] = v;
            }
            Ok(Recipe::from_factors(values))
        })
        .collect()
}

//! Redundancy-based fault detection and classification.
//!
//! Setpoint estimates from the sensor suites are compared with the nominal
//! recipe and with each other. Suites agreeing among themselves but not with
//! the recipe point at the process; a single suite disagreeing with an
//! otherwise nominal consensus points at that suite's sensors.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{derive_recipe_targets, Recipe, RecipeTarget, SensorSuite, DIE_COUNT};
use crate::vsensor::{SetpointEstimate, StateEstimate, WaferParameter};
use crate::{Error, Result};

/// Per-target absolute tolerances: `base[t] * multiplier`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceProfile {
    /// Worst-suite RMS prediction error per target, in target units.
    pub base: [f64; 7],
    pub multiplier: f64,
}

impl Default for ToleranceProfile {
    fn default() -> Self {
        ToleranceProfile {
            base: [2.0, 11.0, 2.0, 9.0, 7.0, 0.1, 14.0],
            multiplier: 3.0,
        }
    }
}

impl ToleranceProfile {
    pub fn tolerance(&self, target: RecipeTarget) -> f64 {
        self.base[target.index()] * self.multiplier
    }

    pub fn tolerances(&self) -> [f64; 7] {
        RecipeTarget::ALL.map(|t| self.tolerance(t))
    }

    /// Same base values, different multiplier.
    pub fn scaled(&self, multiplier: f64) -> ToleranceProfile {
        ToleranceProfile {
            base: self.base,
            multiplier,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in RecipeTarget::ALL {
            let tol = self.tolerance(t);
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(Error::Config(format!(
                    "tolerance for {} must be positive and finite, got {tol}",
                    t.name()
                )));
            }
        }
        Ok(())
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Consensus summary for one target across suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    /// Median over all suites.
    pub median: f64,
    /// Median of the agreeing suites; absent when no single-outlier or
    /// full-agreement reading exists.
    pub consensus: Option<f64>,
    pub max_pairwise_delta: f64,
    pub outliers: Vec<SensorSuite>,
}

/// Checks whether redundant estimates of one quantity agree.
///
/// A suite is an outlier when the remaining suites agree with each other
/// and it sits more than `tolerance` from their median. One outlier leaves
/// the others' median as consensus. Zero or several outliers with some pair
/// still beyond tolerance means no reading can be trusted: every suite is
/// flagged and there is no consensus.
pub fn agreement(estimates: &BTreeMap<SensorSuite, f64>, tolerance: f64) -> Result<Agreement> {
    if estimates.len() < 2 {
        return Err(Error::InsufficientRedundancy(estimates.len()));
    }
    let entries: Vec<(SensorSuite, f64)> = estimates.iter().map(|(s, v)| (*s, *v)).collect();
    let mut all: Vec<f64> = entries.iter().map(|e| e.1).collect();
    let median_all = median(&mut all);
    let max_pairwise_delta = entries
        .iter()
        .enumerate()
        .flat_map(|(i, a)| entries[i + 1..].iter().map(move |b| (a.1 - b.1).abs()))
        .fold(0.0, f64::max);

    if max_pairwise_delta <= tolerance {
        return Ok(Agreement {
            median: median_all,
            consensus: Some(median_all),
            max_pairwise_delta,
            outliers: Vec::new(),
        });
    }

    let mut outliers = Vec::new();
    let mut consensus = None;
    for (i, &(suite, value)) in entries.iter().enumerate() {
        let mut others: Vec<f64> = entries
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, e)| e.1)
            .collect();
        let spread = others.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
            - others.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        let centre = median(&mut others);
        if spread <= tolerance && (value - centre).abs() > tolerance {
            outliers.push(suite);
            consensus = Some(centre);
        }
    }
    if outliers.len() != 1 {
        return Ok(Agreement {
            median: median_all,
            consensus: None,
            max_pairwise_delta,
            outliers: entries.iter().map(|e| e.0).collect(),
        });
    }
    Ok(Agreement {
        median: median_all,
        consensus,
        max_pairwise_delta,
        outliers,
    })
}

/// Outcome of the decision rules for one target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "suite")]
pub enum TargetFinding {
    None,
    ProcessDeviation,
    SensorFault(SensorSuite),
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDelta {
    pub a: SensorSuite,
    pub b: SensorSuite,
    pub delta: f64,
}

/// Everything the decision for one target was based on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEvidence {
    pub target: RecipeTarget,
    pub nominal: f64,
    pub tolerance: f64,
    pub estimates: BTreeMap<SensorSuite, f64>,
    /// Estimate minus nominal.
    pub residuals: BTreeMap<SensorSuite, f64>,
    pub pairwise: Vec<PairDelta>,
    pub agreement: Option<Agreement>,
    pub finding: TargetFinding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityFinding {
    pub parameter: WaferParameter,
    pub dies: Vec<usize>,
}

/// A suite whose die estimate strays from the cross-suite median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityNote {
    pub parameter: WaferParameter,
    pub die: usize,
    pub suite: SensorSuite,
    pub value: f64,
    pub median: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub findings: Vec<QualityFinding>,
    pub notes: Vec<QualityNote>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Classification {
    NoFault,
    ProcessDeviation { targets: Vec<RecipeTarget> },
    SensorFault { suite: SensorSuite, targets: Vec<RecipeTarget> },
    WaferQualityFault { findings: Vec<QualityFinding> },
    Indeterminate { targets: Vec<RecipeTarget> },
}

impl Classification {
    pub fn is_fault(&self) -> bool {
        !matches!(self, Classification::NoFault)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Classification::NoFault => "NoFault",
            Classification::ProcessDeviation { .. } => "ProcessDeviation",
            Classification::SensorFault { .. } => "SensorFault",
            Classification::WaferQualityFault { .. } => "WaferQualityFault",
            Classification::Indeterminate { .. } => "Indeterminate",
        }
    }
}

fn join_targets(targets: &[RecipeTarget]) -> String {
    targets.iter().map(|t| t.name()).collect::<Vec<_>>().join(", ")
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Classification::NoFault => write!(f, "NoFault"),
            Classification::ProcessDeviation { targets } => {
                write!(f, "ProcessDeviation({})", join_targets(targets))
            }
            Classification::SensorFault { suite, targets } => {
                write!(f, "SensorFault({suite}: {})", join_targets(targets))
            }
            Classification::WaferQualityFault { findings } => {
                let parts: Vec<String> = findings
                    .iter()
                    .map(|q| {
                        let dies: Vec<String> = q.dies.iter().map(|d| d.to_string()).collect();
                        format!("{} dies {{{}}}", q.parameter, dies.join(","))
                    })
                    .collect();
                write!(f, "WaferQualityFault({})", parts.join("; "))
            }
            Classification::Indeterminate { targets } => {
                write!(f, "Indeterminate({})", join_targets(targets))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultReport {
    pub wafer_id: String,
    pub classification: Classification,
    pub evidence: Vec<TargetEvidence>,
    #[serde(default)]
    pub quality: Option<QualityReport>,
}

impl FaultReport {
    /// Line-oriented rendering.
    pub fn render_text(&self) -> String {
        let mut out = format!("wafer {}: {}\n", self.wafer_id, self.classification);
        for ev in &self.evidence {
            let finding = match ev.finding {
                TargetFinding::None => "ok".to_string(),
                TargetFinding::ProcessDeviation => "process-deviation".to_string(),
                TargetFinding::SensorFault(s) => format!("sensor-fault {s}"),
                TargetFinding::Indeterminate => "indeterminate".to_string(),
            };
            let est: Vec<String> = ev
                .estimates
                .iter()
                .map(|(s, v)| format!("{s}={v:.4} ({:+.4})", ev.residuals[s]))
                .collect();
            let max_delta = ev.agreement.as_ref().map_or(f64::NAN, |a| a.max_pairwise_delta);
            out += &format!(
                "  {:<15} nominal={:.4} tol={:.4} max_delta={:.4} {} -> {}\n",
                ev.target.name(),
                ev.nominal,
                ev.tolerance,
                max_delta,
                est.join(" "),
                finding
            );
        }
        if let Some(q) = &self.quality {
            for f in &q.findings {
                let dies: Vec<String> = f.dies.iter().map(|d| d.to_string()).collect();
                out += &format!("  quality {} out of bounds at dies {}\n", f.parameter, dies.join(","));
            }
            for n in &q.notes {
                out += &format!(
                    "  note {}[{}] {}={:.4} vs median {:.4}\n",
                    n.parameter, n.die, n.suite, n.value, n.median
                );
            }
        }
        out
    }
}

fn evaluate_target(
    target: RecipeTarget,
    nominal: f64,
    tolerance: f64,
    estimates: BTreeMap<SensorSuite, f64>,
) -> TargetEvidence {
    let residuals: BTreeMap<SensorSuite, f64> =
        estimates.iter().map(|(s, v)| (*s, v - nominal)).collect();
    let suites: Vec<SensorSuite> = estimates.keys().copied().collect();
    let pairwise = suites
        .iter()
        .enumerate()
        .flat_map(|(i, a)| {
            suites[i + 1..].iter().map(|b| PairDelta {
                a: *a,
                b: *b,
                delta: estimates[a] - estimates[b],
            })
        })
        .collect();
    let agreement = agreement(&estimates, tolerance).ok();
    let finding = match &agreement {
        None => TargetFinding::Indeterminate,
        Some(_) if residuals.values().all(|r| r.abs() <= tolerance) => TargetFinding::None,
        Some(a) => match (a.consensus, a.outliers.as_slice()) {
            (Some(c), []) if (c - nominal).abs() > tolerance => TargetFinding::ProcessDeviation,
            (Some(_), []) => TargetFinding::None,
            (Some(c), [suite]) if (c - nominal).abs() <= tolerance => TargetFinding::SensorFault(*suite),
            _ => TargetFinding::Indeterminate,
        },
    };
    TargetEvidence {
        target,
        nominal,
        tolerance,
        estimates,
        residuals,
        pairwise,
        agreement,
        finding,
    }
}

fn aggregate(evidence: &[TargetEvidence]) -> Classification {
    let flagged: Vec<&TargetEvidence> = evidence
        .iter()
        .filter(|e| e.finding != TargetFinding::None)
        .collect();
    let targets: Vec<RecipeTarget> = flagged.iter().map(|e| e.target).collect();
    let Some(first) = flagged.first() else {
        return Classification::NoFault;
    };
    if flagged.iter().all(|e| e.finding == first.finding) {
        match first.finding {
            TargetFinding::ProcessDeviation => return Classification::ProcessDeviation { targets },
            TargetFinding::SensorFault(suite) => return Classification::SensorFault { suite, targets },
            _ => {}
        }
    }
    Classification::Indeterminate { targets }
}

/// Applies the per-target decision rules and aggregates them for one wafer.
///
/// Per target, suites whose estimate is not finite are left out; a target
/// with fewer than two usable estimates is Indeterminate.
pub fn detect(
    wafer_id: &str,
    nominal: &Recipe,
    estimates: &BTreeMap<SensorSuite, [f64; 7]>,
    tolerances: &ToleranceProfile,
) -> Result<FaultReport> {
    if estimates.len() < 2 {
        return Err(Error::InsufficientRedundancy(estimates.len()));
    }
    let nominal_targets = derive_recipe_targets(nominal)?;
    let evidence: Vec<TargetEvidence> = RecipeTarget::ALL
        .into_iter()
        .map(|t| {
            let per_suite = estimates
                .iter()
                .map(|(s, v)| (*s, v[t.index()]))
                .filter(|(_, v)| v.is_finite())
                .collect();
            evaluate_target(t, nominal_targets[t.index()], tolerances.tolerance(t), per_suite)
        })
        .collect();
    Ok(FaultReport {
        wafer_id: wafer_id.to_string(),
        classification: aggregate(&evidence),
        evidence,
        quality: None,
    })
}

/// Drops the model keys from per-suite setpoint estimates.
pub fn setpoint_values(estimates: &BTreeMap<SensorSuite, SetpointEstimate>) -> BTreeMap<SensorSuite, [f64; 7]> {
    estimates.iter().map(|(s, e)| (*s, e.values)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// Acceptable interval for one wafer parameter, global with per-die overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterBounds {
    pub global: Interval,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_die: BTreeMap<usize, Interval>,
}

impl ParameterBounds {
    pub fn global(lower: f64, upper: f64) -> ParameterBounds {
        ParameterBounds {
            global: Interval { lower, upper },
            per_die: BTreeMap::new(),
        }
    }

    pub fn for_die(&self, die: usize) -> Interval {
        self.per_die.get(&die).copied().unwrap_or(self.global)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityBounds {
    /// Microns.
    pub lwr: ParameterBounds,
    /// Angstroms.
    pub oxide_loss: ParameterBounds,
}

impl Default for QualityBounds {
    fn default() -> Self {
        QualityBounds {
            lwr: ParameterBounds::global(0.0, 0.2),
            oxide_loss: ParameterBounds::global(300.0, 600.0),
        }
    }
}

impl QualityBounds {
    pub fn get(&self, p: WaferParameter) -> &ParameterBounds {
        match p {
            WaferParameter::Lwr => &self.lwr,
            WaferParameter::OxideLoss => &self.oxide_loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in WaferParameter::ALL {
            let b = self.get(p);
            for (die, iv) in std::iter::once((0, &b.global)).chain(b.per_die.iter().map(|(d, i)| (*d, i))) {
                if die > DIE_COUNT {
                    return Err(Error::Config(format!("{p} bounds name die {die}, valid 1..={DIE_COUNT}")));
                }
                if !(iv.lower < iv.upper) {
                    return Err(Error::Config(format!(
                        "{p} bounds need lower < upper, got [{}, {}]",
                        iv.lower, iv.upper
                    )));
                }
            }
            if b.per_die.contains_key(&0) {
                return Err(Error::Config(format!("{p} bounds name die 0, valid 1..={DIE_COUNT}")));
            }
        }
        Ok(())
    }
}

/// Cross-suite spread beyond which a die estimate is noted as evidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsensusTolerance {
    pub lwr: f64,
    pub oxide_loss: f64,
}

impl Default for ConsensusTolerance {
    fn default() -> Self {
        ConsensusTolerance {
            lwr: 0.02,
            oxide_loss: 40.0,
        }
    }
}

impl ConsensusTolerance {
    pub fn get(&self, p: WaferParameter) -> f64 {
        match p {
            WaferParameter::Lwr => self.lwr,
            WaferParameter::OxideLoss => self.oxide_loss,
        }
    }
}

/// Compares the cross-suite median of each die estimate with its bounds.
pub fn classify_quality(
    estimates: &BTreeMap<SensorSuite, StateEstimate>,
    bounds: &QualityBounds,
    consensus_tol: &ConsensusTolerance,
) -> QualityReport {
    let mut report = QualityReport::default();
    for p in WaferParameter::ALL {
        let mut dies = Vec::new();
        for die in 1..=DIE_COUNT {
            let values: Vec<(SensorSuite, f64)> = estimates
                .iter()
                .filter_map(|(s, e)| e.get(p).get(die - 1).copied().flatten().map(|v| (*s, v)))
                .filter(|(_, v)| v.is_finite())
                .collect();
            if values.is_empty() {
                continue;
            }
            let mut vs: Vec<f64> = values.iter().map(|v| v.1).collect();
            let m = median(&mut vs);
            if !bounds.get(p).for_die(die).contains(m) {
                dies.push(die);
            }
            for (suite, value) in values {
                if (value - m).abs() > consensus_tol.get(p) {
                    report.notes.push(QualityNote {
                        parameter: p,
                        die,
                        suite,
                        value,
                        median: m,
                    });
                }
            }
        }
        if !dies.is_empty() {
            report.findings.push(QualityFinding { parameter: p, dies });
        }
    }
    report
}

/// Attaches quality results; findings only reclassify a setpoint-clean wafer.
pub fn with_quality(mut report: FaultReport, quality: QualityReport) -> FaultReport {
    if report.classification == Classification::NoFault && !quality.findings.is_empty() {
        report.classification = Classification::WaferQualityFault {
            findings: quality.findings.clone(),
        };
    }
    report.quality = Some(quality);
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use SensorSuite::{Machine, Oes, Rfm};

    fn est(values: [f64; 3]) -> BTreeMap<SensorSuite, f64> {
        SensorSuite::ALL.into_iter().zip(values).collect()
    }

    fn nominal() -> Recipe {
        Recipe::new(100.0, 350.0, 150.0, 40.0, 60.0)
    }

    fn all_nominal() -> BTreeMap<SensorSuite, [f64; 7]> {
        let t = derive_recipe_targets(&nominal()).unwrap();
        SensorSuite::ALL.into_iter().map(|s| (s, t)).collect()
    }

    #[test]
    fn agreement_examples() {
        let a = agreement(&est([100.0, 101.0, 100.0]), 3.0).unwrap();
        assert_eq!(a.median, 100.0);
        assert_eq!(a.consensus, Some(100.0));
        assert!(a.outliers.is_empty());

        let a = agreement(&est([100.0, 100.0, 140.0]), 3.0).unwrap();
        assert_eq!(a.outliers, vec![Rfm]);
        assert_eq!(a.consensus, Some(100.0));

        let a = agreement(&est([100.0, 120.0, 140.0]), 3.0).unwrap();
        assert_eq!(a.outliers, vec![Machine, Oes, Rfm]);
        assert_eq!(a.consensus, None);
        assert_eq!(a.max_pairwise_delta, 40.0);
    }

    #[test]
    fn agreement_needs_two() {
        let one: BTreeMap<_, _> = [(Oes, 1.0)].into();
        assert!(matches!(agreement(&one, 1.0), Err(Error::InsufficientRedundancy(1))));
    }

    #[test]
    fn two_suites_disagreeing_have_no_consensus() {
        let two: BTreeMap<_, _> = [(Machine, 0.0), (Rfm, 10.0)].into();
        let a = agreement(&two, 1.0).unwrap();
        assert_eq!(a.consensus, None);
        assert_eq!(a.median, 5.0);
    }

    #[test]
    fn detect_clean_is_no_fault() {
        let r = detect("w", &nominal(), &all_nominal(), &ToleranceProfile::default()).unwrap();
        assert_eq!(r.classification, Classification::NoFault);
        assert_eq!(r.evidence.len(), 7);
    }

    #[test]
    fn detect_process_deviation() {
        let mut e = all_nominal();
        for (s, v) in e.iter_mut().zip([120.0, 119.0, 121.0]) {
            s.1[0] = v;
        }
        let tol = ToleranceProfile::default();
        assert_eq!(tol.tolerance(RecipeTarget::Pressure), 6.0);
        let r = detect("w", &nominal(), &e, &tol).unwrap();
        assert_eq!(
            r.classification,
            Classification::ProcessDeviation {
                targets: vec![RecipeTarget::Pressure]
            }
        );
    }

    #[test]
    fn detect_sensor_fault() {
        let mut e = all_nominal();
        e.get_mut(&Rfm).unwrap()[1] = 420.0;
        let tol = ToleranceProfile::default();
        assert_eq!(tol.tolerance(RecipeTarget::TopPower), 33.0);
        let r = detect("w", &nominal(), &e, &tol).unwrap();
        assert_eq!(
            r.classification,
            Classification::SensorFault {
                suite: Rfm,
                targets: vec![RecipeTarget::TopPower]
            }
        );
        let ev = &r.evidence[1];
        assert_eq!(ev.residuals[&Rfm], 70.0);
        assert_eq!(ev.pairwise.len(), 3);
    }

    #[test]
    fn outlier_against_shifted_consensus_is_indeterminate() {
        let mut e = all_nominal();
        e.get_mut(&Machine).unwrap()[0] = 120.0;
        e.get_mut(&Oes).unwrap()[0] = 120.0;
        let r = detect("w", &nominal(), &e, &ToleranceProfile::default()).unwrap();
        assert_eq!(r.evidence[0].finding, TargetFinding::Indeterminate);
    }

    #[test]
    fn mixed_findings_are_indeterminate() {
        let mut e = all_nominal();
        e.get_mut(&Rfm).unwrap()[1] = 420.0;
        for s in SensorSuite::ALL {
            e.get_mut(&s).unwrap()[0] = 120.0;
        }
        let r = detect("w", &nominal(), &e, &ToleranceProfile::default()).unwrap();
        assert_eq!(
            r.classification,
            Classification::Indeterminate {
                targets: vec![RecipeTarget::Pressure, RecipeTarget::TopPower]
            }
        );
    }

    #[test]
    fn missing_estimates() {
        let one: BTreeMap<_, _> = [(Oes, [0.0; 7])].into();
        assert!(matches!(
            detect("w", &nominal(), &one, &ToleranceProfile::default()),
            Err(Error::InsufficientRedundancy(1))
        ));
        let mut e = all_nominal();
        e.get_mut(&Oes).unwrap()[2] = f64::NAN;
        e.get_mut(&Rfm).unwrap()[2] = f64::NAN;
        let r = detect("w", &nominal(), &e, &ToleranceProfile::default()).unwrap();
        assert_eq!(r.evidence[2].finding, TargetFinding::Indeterminate);
    }

    #[test]
    fn tolerance_validation() {
        assert!(ToleranceProfile::default().validate().is_ok());
        assert!(ToleranceProfile::default().scaled(0.0).validate().is_err());
    }

    fn state(lwr: f64, ox: f64) -> StateEstimate {
        StateEstimate {
            lwr: vec![Some(lwr); DIE_COUNT],
            oxide_loss: vec![Some(ox); DIE_COUNT],
        }
    }

    #[test]
    fn quality_in_bounds() {
        let e: BTreeMap<_, _> = SensorSuite::ALL.map(|s| (s, state(0.1, 450.0))).into();
        let q = classify_quality(&e, &QualityBounds::default(), &ConsensusTolerance::default());
        assert_eq!(q, QualityReport::default());
    }

    #[test]
    fn quality_die_32_oxide_high() {
        let mut e: BTreeMap<_, _> = SensorSuite::ALL.map(|s| (s, state(0.1, 450.0))).into();
        for s in e.values_mut() {
            s.oxide_loss[31] = Some(700.0);
        }
        let q = classify_quality(&e, &QualityBounds::default(), &ConsensusTolerance::default());
        assert_eq!(
            q.findings,
            vec![QualityFinding {
                parameter: WaferParameter::OxideLoss,
                dies: vec![32]
            }]
        );
        let clean = detect("w", &nominal(), &all_nominal(), &ToleranceProfile::default()).unwrap();
        let r = with_quality(clean, q);
        assert!(matches!(r.classification, Classification::WaferQualityFault { .. }));
        assert!(r.render_text().contains("WaferQualityFault(oxide_loss dies {32})"));
    }

    #[test]
    fn quality_single_suite_is_note_only() {
        let mut e: BTreeMap<_, _> = SensorSuite::ALL.map(|s| (s, state(0.1, 450.0))).into();
        e.get_mut(&Oes).unwrap().lwr[4] = Some(0.5);
        let q = classify_quality(&e, &QualityBounds::default(), &ConsensusTolerance::default());
        assert!(q.findings.is_empty());
        assert_eq!(q.notes.len(), 1);
        assert_eq!((q.notes[0].die, q.notes[0].suite), (5, Oes));
    }

    #[test]
    fn per_die_bounds_override() {
        let mut b = QualityBounds::default();
        b.lwr.per_die.insert(3, Interval { lower: 0.0, upper: 0.05 });
        assert!(b.validate().is_ok());
        let e: BTreeMap<_, _> = [(Machine, state(0.1, 450.0))].into();
        let q = classify_quality(&e, &b, &ConsensusTolerance::default());
        assert_eq!(q.findings[0].dies, vec![3]);
        b.oxide_loss.global = Interval { lower: 5.0, upper: 5.0 };
        assert!(b.validate().is_err());
    }

    #[test]
    fn report_round_trips_json() {
        let mut e = all_nominal();
        e.get_mut(&Rfm).unwrap()[1] = 420.0;
        let r = detect("w7", &nominal(), &e, &ToleranceProfile::default()).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        let back: FaultReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
        assert!(r.render_text().starts_with("wafer w7: SensorFault(RFM: top_power)"));
    }

    fn permuted(suite: SensorSuite, perm: &[usize; 3]) -> SensorSuite {
        let i = SensorSuite::ALL.iter().position(|s| *s == suite).unwrap();
        SensorSuite::ALL[perm[i]]
    }

    fn estimates_strategy() -> impl Strategy<Value = BTreeMap<SensorSuite, [f64; 7]>> {
        // Small integer-valued offsets make ties and exact boundaries likely.
        prop::collection::vec(prop::collection::vec(-12i32..12, 7), 3).prop_map(|rows| {
            let t = derive_recipe_targets(&nominal()).unwrap();
            let tol = ToleranceProfile::default().tolerances();
            SensorSuite::ALL
                .into_iter()
                .zip(rows)
                .map(|(s, r)| {
                    let mut v = t;
                    for k in 0..7 {
                        v[k] += r[k] as f64 * tol[k] / 4.0;
                    }
                    (s, v)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn permutation_relabels_only_suites(
            e in estimates_strategy(),
            perm in Just([0usize, 1, 2]).prop_shuffle(),
        ) {
            let perm = [perm[0], perm[1], perm[2]];
            let tol = ToleranceProfile::default();
            let base = detect("w", &nominal(), &e, &tol).unwrap();
            let relabeled: BTreeMap<_, _> = e.iter().map(|(s, v)| (permuted(*s, &perm), *v)).collect();
            let other = detect("w", &nominal(), &relabeled, &tol).unwrap();
            let expected = match base.classification.clone() {
                Classification::SensorFault { suite, targets } => {
                    Classification::SensorFault { suite: permuted(suite, &perm), targets }
                }
                c => c,
            };
            prop_assert_eq!(other.classification, expected);
            for (a, b) in base.evidence.iter().zip(&other.evidence) {
                let mapped = match a.finding {
                    TargetFinding::SensorFault(s) => TargetFinding::SensorFault(permuted(s, &perm)),
                    f => f,
                };
                prop_assert_eq!(b.finding, mapped);
            }
        }

        #[test]
        fn larger_tolerance_keeps_no_fault(e in estimates_strategy(), k in 3.0f64..10.0) {
            let tol = ToleranceProfile::default();
            let base = detect("w", &nominal(), &e, &tol).unwrap();
            if base.classification == Classification::NoFault {
                let wide = detect("w", &nominal(), &e, &tol.scaled(k)).unwrap();
                prop_assert_eq!(wide.classification, Classification::NoFault);
            }
        }

        #[test]
        fn single_outlier_is_attributed(
            v in 0.0f64..100.0,
            offset in 4.0f64..50.0,
            idx in 0usize..3,
            jitter in prop::collection::vec(-0.5f64..0.5, 2),
        ) {
            let mut e = BTreeMap::new();
            let mut j = jitter.iter();
            for (i, s) in SensorSuite::ALL.into_iter().enumerate() {
                e.insert(s, if i == idx { v + offset } else { v + j.next().unwrap() });
            }
            let a = agreement(&e, 3.0).unwrap();
            prop_assert_eq!(a.outliers, vec![SensorSuite::ALL[idx]]);
            prop_assert!(a.consensus.is_some());
        }
    }
}

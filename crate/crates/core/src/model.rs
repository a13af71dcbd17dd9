//! Domain types shared across the toolkit: recipes, sensor traces, wafer
//! records, and the train/validation/test split.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of measured die positions per wafer.
pub const DIE_COUNT: usize = 32;

/// Side of the square grid the dies are laid out on (corners excluded).
const DIE_GRID: usize = 6;

/// Grid coordinates of a die, centred on the wafer and normalised so the
/// outermost die centres sit at radius ≈ 1.
///
/// Dies are numbered 1..=32 row-major over a 6×6 grid with the four corner
/// cells removed.
pub fn die_position(die: usize) -> (f64, f64) {
    assert!((1..=DIE_COUNT).contains(&die), "die index {die} out of 1..=32");
    let mut n = 0;
    for row in 0..DIE_GRID {
        for col in 0..DIE_GRID {
            let corner = (row == 0 || row == DIE_GRID - 1) && (col == 0 || col == DIE_GRID - 1);
            if corner {
                continue;
            }
            n += 1;
            if n == die {
                let half = (DIE_GRID as f64 - 1.0) / 2.0;
                let scale = (half * half + (half - 1.0) * (half - 1.0)).sqrt();
                return ((col as f64 - half) / scale, (half - row as f64) / scale);
            }
        }
    }
    unreachable!()
}

/// Independently designed recipe factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Pressure,
    TopPower,
    RfBottom,
    Bcl3,
    Cl2,
}

impl Factor {
    pub const ALL: [Factor; 5] = [
        Factor::Pressure,
        Factor::TopPower,
        Factor::RfBottom,
        Factor::Bcl3,
        Factor::Cl2,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Factor::Pressure => "pressure",
            Factor::TopPower => "top_power",
            Factor::RfBottom => "rf_bottom",
            Factor::Bcl3 => "bcl3",
            Factor::Cl2 => "cl2",
        }
    }
}

impl FromStr for Factor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Factor::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Key {
                key: s.to_string(),
                valid: Factor::ALL.map(Factor::name).join(", "),
            })
    }
}

/// The seven modelled recipe setpoint targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipeTarget {
    Pressure,
    TopPower,
    RfBottom,
    Bcl3,
    Cl2,
    Cl2Bcl3Ratio,
    TotalFlow,
}

impl RecipeTarget {
    pub const ALL: [RecipeTarget; 7] = [
        RecipeTarget::Pressure,
        RecipeTarget::TopPower,
        RecipeTarget::RfBottom,
        RecipeTarget::Bcl3,
        RecipeTarget::Cl2,
        RecipeTarget::Cl2Bcl3Ratio,
        RecipeTarget::TotalFlow,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RecipeTarget::Pressure => "pressure",
            RecipeTarget::TopPower => "top_power",
            RecipeTarget::RfBottom => "rf_bottom",
            RecipeTarget::Bcl3 => "bcl3",
            RecipeTarget::Cl2 => "cl2",
            RecipeTarget::Cl2Bcl3Ratio => "cl2_bcl3_ratio",
            RecipeTarget::TotalFlow => "total_flow",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            RecipeTarget::Pressure => "mTorr",
            RecipeTarget::TopPower | RecipeTarget::RfBottom => "W",
            RecipeTarget::Cl2Bcl3Ratio => "",
            _ => "sccm",
        }
    }
}

impl FromStr for RecipeTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RecipeTarget::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Key {
                key: s.to_string(),
                valid: RecipeTarget::ALL.map(RecipeTarget::name).join(", "),
            })
    }
}

/// Recipe setpoints. Units: mTorr, watts, sccm.
///
/// Serializes as the five independent factors; ratio and total flow are
/// re-derived on load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "RecipeFactors", from = "RecipeFactors")]
pub struct Recipe {
    pub pressure: f64,
    pub top_power: f64,
    pub rf_bottom: f64,
    pub bcl3_flow: f64,
    pub cl2_flow: f64,
    /// `cl2_flow / bcl3_flow`; NaN when `bcl3_flow` is zero.
    pub cl2_bcl3_ratio: f64,
    pub total_flow: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecipeFactors {
    pressure: f64,
    top_power: f64,
    rf_bottom: f64,
    bcl3_flow: f64,
    cl2_flow: f64,
}

impl From<Recipe> for RecipeFactors {
    fn from(r: Recipe) -> Self {
        RecipeFactors {
            pressure: r.pressure,
            top_power: r.top_power,
            rf_bottom: r.rf_bottom,
            bcl3_flow: r.bcl3_flow,
            cl2_flow: r.cl2_flow,
        }
    }
}

impl From<RecipeFactors> for Recipe {
    fn from(f: RecipeFactors) -> Self {
        Recipe::new(f.pressure, f.top_power, f.rf_bottom, f.bcl3_flow, f.cl2_flow)
    }
}

impl Recipe {
    /// Builds a recipe from the five independent factors, deriving ratio and
    /// total flow.
    pub fn new(pressure: f64, top_power: f64, rf_bottom: f64, bcl3_flow: f64, cl2_flow: f64) -> Self {
        let cl2_bcl3_ratio = if bcl3_flow > 0.0 {
            cl2_flow / bcl3_flow
        } else {
            f64::NAN
        };
        Recipe {
            pressure,
            top_power,
            rf_bottom,
            bcl3_flow,
            cl2_flow,
            cl2_bcl3_ratio,
            total_flow: bcl3_flow + cl2_flow,
        }
    }

    pub fn from_factors(values: [f64; 5]) -> Self {
        Recipe::new(values[0], values[1], values[2], values[3], values[4])
    }

    pub fn factors(&self) -> [f64; 5] {
        [
            self.pressure,
            self.top_power,
            self.rf_bottom,
            self.bcl3_flow,
            self.cl2_flow,
        ]
    }

    pub fn factor(&self, factor: Factor) -> f64 {
        self.factors()[factor.index()]
    }

    /// Returns a copy with one factor replaced and derived fields recomputed.
    pub fn with_factor(&self, factor: Factor, value: f64) -> Self {
        let mut f = self.factors();
        f[factor.index()] = value;
        Recipe::from_factors(f)
    }

    /// Checks the recipe invariants, appending violations prefixed by `field`.
    pub fn violations(&self, field: &str) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.pressure > 0.0) {
            out.push(format!("{field}.pressure: must be > 0, got {}", self.pressure));
        }
        for (name, v) in [
            ("top_power", self.top_power),
            ("rf_bottom", self.rf_bottom),
            ("bcl3_flow", self.bcl3_flow),
            ("cl2_flow", self.cl2_flow),
        ] {
            if !(v >= 0.0) {
                out.push(format!("{field}.{name}: must be >= 0, got {v}"));
            }
        }
        if self.bcl3_flow > 0.0 {
            let expected = self.cl2_flow / self.bcl3_flow;
            if (self.cl2_bcl3_ratio - expected).abs() > 1e-12 * expected.abs().max(1.0) {
                out.push(format!(
                    "{field}.cl2_bcl3_ratio: expected cl2/bcl3 = {expected}, got {}",
                    self.cl2_bcl3_ratio
                ));
            }
        }
        if self.total_flow != self.bcl3_flow + self.cl2_flow {
            out.push(format!(
                "{field}.total_flow: expected bcl3 + cl2 = {}, got {}",
                self.bcl3_flow + self.cl2_flow,
                self.total_flow
            ));
        }
        out
    }
}

/// Target vector ordered as [`RecipeTarget::ALL`].
pub fn derive_recipe_targets(recipe: &Recipe) -> Result<[f64; 7]> {
    if recipe.bcl3_flow == 0.0 {
        return Err(Error::RatioUndefined);
    }
    Ok([
        recipe.pressure,
        recipe.top_power,
        recipe.rf_bottom,
        recipe.bcl3_flow,
        recipe.cl2_flow,
        recipe.cl2_flow / recipe.bcl3_flow,
        recipe.bcl3_flow + recipe.cl2_flow,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SensorSuite {
    Machine,
    #[serde(rename = "OES")]
    Oes,
    #[serde(rename = "RFM")]
    Rfm,
}

impl SensorSuite {
    pub const ALL: [SensorSuite; 3] = [SensorSuite::Machine, SensorSuite::Oes, SensorSuite::Rfm];

    pub fn name(self) -> &'static str {
        match self {
            SensorSuite::Machine => "Machine",
            SensorSuite::Oes => "OES",
            SensorSuite::Rfm => "RFM",
        }
    }

    /// Lower-case token used in file names.
    pub fn slug(self) -> &'static str {
        match self {
            SensorSuite::Machine => "machine",
            SensorSuite::Oes => "oes",
            SensorSuite::Rfm => "rfm",
        }
    }
}

impl fmt::Display for SensorSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SensorSuite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SensorSuite::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Key {
                key: s.to_string(),
                valid: "Machine, OES, RFM".into(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EtchRegion {
    Al,
    TiN,
    Ox,
}

impl EtchRegion {
    pub const ALL: [EtchRegion; 3] = [EtchRegion::Al, EtchRegion::TiN, EtchRegion::Ox];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EtchRegion::Al => "Al",
            EtchRegion::TiN => "TiN",
            EtchRegion::Ox => "Ox",
        }
    }
}

impl fmt::Display for EtchRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EtchRegion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EtchRegion::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Key {
                key: s.to_string(),
                valid: "Al, TiN, Ox".into(),
            })
    }
}

/// Half-open time interval `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

/// Etch-region windows, indexed by [`EtchRegion::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionWindows(pub [Window; 3]);

impl RegionWindows {
    pub fn get(&self, region: EtchRegion) -> Window {
        self.0[region.index()]
    }

    /// Violations of the ordering rule Al → TiN → Ox, non-overlapping.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for region in EtchRegion::ALL {
            let w = self.get(region);
            if !(w.start < w.end) {
                out.push(format!("region {region}: start {} not before end {}", w.start, w.end));
            }
        }
        for pair in EtchRegion::ALL.windows(2) {
            let (a, b) = (self.get(pair[0]), self.get(pair[1]));
            if a.end > b.start {
                out.push(format!("regions {} and {} overlap or are out of order", pair[0], pair[1]));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorTrace {
    pub wafer_id: String,
    pub suite: SensorSuite,
    pub channel: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub region_windows: Option<RegionWindows>,
}

impl SensorTrace {
    /// Values whose sample times fall in `window`, with their times.
    pub fn window_samples(&self, window: Window) -> (Vec<f64>, Vec<f64>) {
        self.times
            .iter()
            .zip(&self.values)
            .filter(|(t, _)| window.contains(**t))
            .map(|(t, v)| (*t, *v))
            .unzip()
    }
}

/// Per-die post-etch measurements: LWR in microns, oxide loss in angstroms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaferState {
    pub lwr_per_die: Vec<f64>,
    pub oxide_loss_per_die: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub enum Split {
    Train,
    Validation,
    Test,
    #[default]
    Unassigned,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            _ => Err(Error::Key {
                key: s.into(),
                valid: "train, validation, test, unassigned".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaferRecord {
    pub wafer_id: String,
    pub lot_id: String,
    pub nominal_recipe: Recipe,
    /// Recipe actually delivered to the chamber; known only for simulated wafers.
    pub actual_recipe: Option<Recipe>,
    pub traces: Vec<SensorTrace>,
    pub wafer_state: Option<WaferState>,
    pub split: Split,
}

impl WaferRecord {
    pub fn trace(&self, suite: SensorSuite, channel: &str) -> Option<&SensorTrace> {
        self.traces
            .iter()
            .find(|t| t.suite == suite && t.channel == channel)
    }
}

/// Lists every invariant violation in `record`; empty means well-formed.
pub fn validate_wafer_record(record: &WaferRecord) -> Vec<String> {
    let mut out = record.nominal_recipe.violations("nominal_recipe");
    if let Some(actual) = &record.actual_recipe {
        out.extend(actual.violations("actual_recipe"));
    }

    let mut seen = BTreeSet::new();
    for trace in &record.traces {
        let label = format!("traces[{}/{}]", trace.suite, trace.channel);
        if !seen.insert((trace.suite, trace.channel.as_str())) {
            out.push(format!("{label}: duplicate trace for suite and channel"));
        }
        if trace.times.len() != trace.values.len() {
            out.push(format!(
                "{label}: {} times but {} values",
                trace.times.len(),
                trace.values.len()
            ));
        }
        if let Some(i) = trace.times.windows(2).position(|w| !(w[1] > w[0])) {
            out.push(format!(
                "{label}.samples: times not strictly increasing at index {}",
                i + 1
            ));
        }
        if let Some(windows) = &trace.region_windows {
            for v in windows.violations() {
                out.push(format!("{label}.region_windows: {v}"));
            }
        }
    }

    match &record.wafer_state {
        Some(state) => {
            for (name, v) in [
                ("lwr_per_die", &state.lwr_per_die),
                ("oxide_loss_per_die", &state.oxide_loss_per_die),
            ] {
                if v.len() != DIE_COUNT {
                    out.push(format!(
                        "wafer_state.{name}: expected {DIE_COUNT}, got {}",
                        v.len()
                    ));
                }
            }
        }
        None if matches!(record.split, Split::Train | Split::Validation) => {
            out.push(format!(
                "wafer_state: required for {} wafers",
                record.split.name()
            ));
        }
        None => {}
    }
    out
}

/// Sizes of the train / validation / test partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts {
            train: 35,
            validation: 23,
            test: 12,
        }
    }
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

/// Seeded random split labels for `n` items; the remainder stays unassigned.
pub fn split_labels(n: usize, seed: u64, counts: SplitCounts) -> Result<Vec<Split>> {
    if counts.total() > n {
        return Err(Error::Sizing(format!(
            "split counts sum to {} but only {n} records",
            counts.total()
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut labels = vec![Split::Unassigned; n];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = if rank < counts.train {
            Split::Train
        } else if rank < counts.train + counts.validation {
            Split::Validation
        } else if rank < counts.total() {
            Split::Test
        } else {
            Split::Unassigned
        };
    }
    Ok(labels)
}

/// Tags each record with a split, random without replacement by `seed`.
pub fn assign_splits(
    mut records: Vec<WaferRecord>,
    seed: u64,
    counts: SplitCounts,
) -> Result<Vec<WaferRecord>> {
    let labels = split_labels(records.len(), seed, counts)?;
    for (r, s) in records.iter_mut().zip(labels) {
        r.split = s;
    }
    Ok(records)
}

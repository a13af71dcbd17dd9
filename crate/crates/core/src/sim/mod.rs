//! Wafer-run simulator: the data source standing in for real tool data.

mod truth;

pub use truth::{
    rfm_channel_names, ChamberMap, ChannelResponse, DieResponse, EmissionPeak, GroundTruth,
    Interaction, OesModel, RegionResponse, Spectrometer, Timing, TruthSpec, WaferMap,
    ENDPOINT_CHANNEL, MACHINE_CHANNELS, RAW_SPECTRAL_LINES, SPECTROMETERS,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doe::{central_composite_design, scale_design_to_recipes, DesignSpec};
use crate::error::Result;
use crate::model::{
    assign_splits, EtchRegion, Factor, Recipe, RegionWindows, SensorSuite, SensorTrace, Split,
    SplitCounts, WaferRecord, WaferState, Window,
};
use crate::pretreat::bin_spectra;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultKind {
    #[default]
    None,
    SetpointOffset {
        factor: Factor,
        delta: f64,
    },
    SensorGain {
        suite: SensorSuite,
        channel: String,
        gain: f64,
    },
    SensorDrift {
        suite: SensorSuite,
        channel: String,
        slope: f64,
    },
    StuckSensor {
        suite: SensorSuite,
        channel: String,
        value: f64,
    },
}

/// A fault injected from wafer `onset_wafer` onwards.
///
/// Sensor faults target channels by name; a single `*` in the name matches
/// any run of characters, so `"*_S2"` hits every line of spectrometer 2 and
/// `"*"` the whole suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FaultScenario {
    pub kind: FaultKind,
    #[serde(default)]
    pub onset_wafer: usize,
}

impl FaultScenario {
    pub fn none() -> Self {
        FaultScenario::default()
    }

    pub fn new(kind: FaultKind, onset_wafer: usize) -> Self {
        FaultScenario { kind, onset_wafer }
    }

    fn active(&self, wafer_index: usize) -> bool {
        wafer_index >= self.onset_wafer
    }

    /// Recipe the chamber actually runs when `nominal` is commanded.
    pub fn actual_recipe(&self, nominal: &Recipe, wafer_index: usize) -> Recipe {
        match &self.kind {
            FaultKind::SetpointOffset { factor, delta } if self.active(wafer_index) => {
                nominal.with_factor(*factor, nominal.factor(*factor) + delta)
            }
            _ => *nominal,
        }
    }
}

pub(crate) fn channel_matches(pattern: &str, name: &str) -> bool {
    match pattern.split_once('*') {
        Some((prefix, suffix)) => {
            name.len() >= prefix.len() + suffix.len()
                && name.starts_with(prefix)
                && name.ends_with(suffix)
        }
        None => pattern == name,
    }
}

/// Applies a sensor fault to a trace it targets; other traces pass through.
pub fn apply_fault_scenario(trace: &SensorTrace, scenario: &FaultScenario, wafer_index: usize) -> SensorTrace {
    let mut out = trace.clone();
    if !scenario.active(wafer_index) {
        return out;
    }
    let targets = |suite: &SensorSuite, channel: &str| *suite == trace.suite && channel_matches(channel, &trace.channel);
    match &scenario.kind {
        FaultKind::SensorGain { suite, channel, gain } if targets(suite, channel) => {
            out.values.iter_mut().for_each(|v| *v *= gain);
        }
        FaultKind::SensorDrift { suite, channel, slope } if targets(suite, channel) => {
            let shift = slope * (wafer_index - scenario.onset_wafer) as f64;
            out.values.iter_mut().for_each(|v| *v += shift);
        }
        FaultKind::StuckSensor { suite, channel, value } if targets(suite, channel) => {
            out.values.iter_mut().for_each(|v| *v = *value);
        }
        _ => {}
    }
    out
}

/// Noiseless wafer state for `recipe`: chamber map, then per-die wafer map.
pub fn ground_truth_wafer_states(recipe: &Recipe, truth: &GroundTruth) -> WaferState {
    truth.wafer_state_from_delta(&truth.chamber_state_delta(recipe))
}

pub fn wafer_id(index: usize) -> String {
    format!("W{:03}", index + 1)
}

/// Lots hold 24 wafers, so a 70-wafer design spans three lots.
pub fn lot_id(index: usize) -> String {
    format!("L{}", index / 24 + 1)
}

fn region_windows(timing: &Timing) -> RegionWindows {
    let mut start = 0.0;
    let mut windows = [Window { start: 0.0, end: 0.0 }; 3];
    for (w, d) in windows.iter_mut().zip(timing.region_durations) {
        *w = Window { start, end: start + d };
        start += d;
    }
    RegionWindows(windows)
}

fn sample_times(timing: &Timing, suite: SensorSuite) -> Vec<f64> {
    let total: f64 = timing.region_durations.iter().sum();
    let (period, offset) = timing.sampling[suite as usize];
    (0..)
        .map(|i| offset + i as f64 * period)
        .take_while(|&t| t < total)
        .collect()
}

fn region_at(windows: &RegionWindows, t: f64) -> EtchRegion {
    EtchRegion::ALL
        .into_iter()
        .find(|r| windows.get(*r).contains(t))
        .unwrap_or(EtchRegion::Ox)
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma.max(0.0)).expect("finite sigma")
}

/// Simulates one wafer run. Deterministic in `seed`.
pub fn simulate_wafer(
    recipe: &Recipe,
    truth: &GroundTruth,
    scenario: &FaultScenario,
    wafer_index: usize,
    seed: u64,
) -> WaferRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = wafer_id(wafer_index);
    let mut actual = scenario.actual_recipe(recipe, wafer_index);
    for f in Factor::ALL {
        let sigma = truth.factor_jitter[f.index()];
        if sigma > 0.0 {
            let v = actual.factor(f) + normal(sigma).sample(&mut rng);
            actual = actual.with_factor(f, v.max(0.0));
        }
    }
    let coded = truth.coded(&actual);

    let state_noise = normal(truth.state_sigma);
    let delta: Vec<f64> = truth
        .chamber_state_delta(&actual)
        .into_iter()
        .map(|d| d + state_noise.sample(&mut rng))
        .collect();

    let windows = region_windows(&truth.timing);
    let mut traces = Vec::new();
    let drift_index = wafer_index as f64;

    for (suite, channels) in [
        (SensorSuite::Machine, &truth.machine),
        (SensorSuite::Rfm, &truth.rfm),
    ] {
        let times = sample_times(&truth.timing, suite);
        for ch in channels {
            let jitter = normal(ch.wafer_sigma).sample(&mut rng);
            let amps: Vec<f64> = ch
                .regions
                .iter()
                .map(|r| r.amplitude(&delta, &coded) + jitter)
                .collect();
            let noise = normal(ch.noise_sigma);
            let values = times
                .iter()
                .map(|&t| {
                    let region = region_at(&windows, t);
                    let tau = t - windows.get(region).start;
                    let resp = &ch.regions[region.index()];
                    amps[region.index()] * (1.0 + resp.slope * tau)
                        + ch.drift_rate * drift_index
                        + noise.sample(&mut rng)
                })
                .collect();
            traces.push(SensorTrace {
                wafer_id: id.clone(),
                suite,
                channel: ch.name.clone(),
                times: times.clone(),
                values,
                region_windows: Some(windows),
            });
        }
    }

    // OES: synthesize the raw spectrum per sample and spectrometer, then bin.
    let oes = &truth.oes;
    let times = sample_times(&truth.timing, SensorSuite::Oes);
    let peak_jitter = normal(oes.peak_jitter);
    let peak_amps: Vec<[f64; 3]> = oes
        .peaks
        .iter()
        .map(|p| {
            let j = 1.0 + peak_jitter.sample(&mut rng);
            [0, 1, 2].map(|r| p.regions[r].amplitude(&delta, &coded) * j)
        })
        .collect();
    let background_amps = oes.background.each_ref().map(|r| r.amplitude(&delta, &coded));
    let names = oes.channel_names();
    let n_bins = oes.n_bins;
    let mut binned: Vec<Vec<f64>> = vec![Vec::with_capacity(times.len()); names.len()];
    let mut raw = vec![0.0; RAW_SPECTRAL_LINES];
    let mut amps = vec![0.0; oes.peaks.len()];
    for &t in &times {
        let region = region_at(&windows, t);
        let tau = t - windows.get(region).start;
        for ((a, p), pa) in amps.iter_mut().zip(&oes.peaks).zip(&peak_amps) {
            *a = pa[region.index()] * (1.0 + p.regions[region.index()].slope * tau);
        }
        let bg = &oes.background[region.index()];
        let background = background_amps[region.index()] * (1.0 + bg.slope * tau);
        for (s, spec) in oes.spectrometers.iter().enumerate() {
            oes.raw_spectrum(background, &amps, spec.gain, &mut raw);
            if spec.line_noise_sigma > 0.0 {
                let noise = normal(spec.line_noise_sigma);
                raw.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
            }
            let bins = bin_spectra(&raw, n_bins).expect("bin count validated");
            for (b, v) in bins.into_iter().enumerate() {
                binned[s * n_bins + b].push(v + spec.drift_rate * drift_index);
            }
        }
    }
    for (name, values) in names.into_iter().zip(binned) {
        traces.push(SensorTrace {
            wafer_id: id.clone(),
            suite: SensorSuite::Oes,
            channel: name,
            times: times.clone(),
            values,
            region_windows: Some(windows),
        });
    }

    for trace in traces.iter_mut() {
        *trace = apply_fault_scenario(trace, scenario, wafer_index);
    }
    traces.sort_by_key(|t| t.suite);

    let mut state = truth.wafer_state_from_delta(&delta);
    let lwr_noise = normal(truth.wafer_map.lwr_noise);
    let ox_noise = normal(truth.wafer_map.oxide_loss_noise);
    state.lwr_per_die.iter_mut().for_each(|v| *v += lwr_noise.sample(&mut rng));
    state
        .oxide_loss_per_die
        .iter_mut()
        .for_each(|v| *v += ox_noise.sample(&mut rng));

    WaferRecord {
        wafer_id: id,
        lot_id: lot_id(wafer_index),
        nominal_recipe: *recipe,
        actual_recipe: Some(actual),
        traces,
        wafer_state: Some(state),
        split: Split::Unassigned,
    }
}

/// Simulates a full designed experiment: the CCD recipes in seeded random
/// run order, one wafer each, tagged with seeded splits. Wafer `i` uses
/// seed `seed + i`.
pub fn simulate_doe(
    design: &DesignSpec,
    truth: &GroundTruth,
    scenario: &FaultScenario,
    splits: SplitCounts,
    seed: u64,
) -> Result<Vec<WaferRecord>> {
    let points = central_composite_design(design)?;
    let mut recipes = scale_design_to_recipes(&points, design)?;
    recipes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_0d0e));
    let records: Vec<WaferRecord> = recipes
        .par_iter()
        .enumerate()
        .map(|(i, r)| simulate_wafer(r, truth, scenario, i, seed.wrapping_add(i as u64)))
        .collect();
    assign_splits(records, seed, splits)
}

//! Ground-truth process model used by the simulator.
//!
//! Recipe factors are coded relative to a reference recipe, mapped to a
//! small set of chamber states (the forward map `f`), and the chamber states
//! drive both the sensor channels and the per-die wafer states (`g`). Every
//! sensor metric the pretreatment computes is affine in the chamber states
//! when noise is off, which is what makes noiseless recovery exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::doe::DesignSpec;
use crate::model::{die_position, Factor, Recipe, WaferState, DIE_COUNT};

/// Number of OES spectrometers observing the plasma.
pub const SPECTROMETERS: usize = 3;
/// Raw spectral lines per spectrometer sample.
pub const RAW_SPECTRAL_LINES: usize = 2042;
/// Channel used for endpoint-based region segmentation.
pub const ENDPOINT_CHANNEL: &str = "Endpoint_A";

pub const MACHINE_CHANNELS: [&str; 12] = [
    ENDPOINT_CHANNEL,
    "tcp_match_tuning_cap",
    "tcp_match_load_cap",
    "bias_match_tuning_cap",
    "bias_match_load_cap",
    "tcp_rf_power",
    "bias_rf_power",
    "tcp_reflected_power",
    "throttle_valve_position",
    "chamber_pressure",
    "he_clamp_pressure",
    "bias_dc_voltage",
];

/// RFM channel names: two probes, five quantities, seven harmonics.
pub fn rfm_channel_names() -> Vec<String> {
    let mut out = Vec::with_capacity(70);
    for probe in 1..=2 {
        for q in ["V", "I", "Phi", "P", "Z"] {
            for h in 1..=7 {
                out.push(format!("S{probe}{q}{h}"));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub factors: (Factor, Factor),
    /// Per chamber state coefficient on the product of coded levels.
    pub coefficients: Vec<f64>,
}

/// Forward map from coded recipe factors to chamber states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChamberMap {
    pub state_names: Vec<String>,
    pub baseline: Vec<f64>,
    /// `linear[k][j]`: sensitivity of state `k` to coded factor `j`.
    pub linear: Vec<[f64; 5]>,
    pub interactions: Vec<Interaction>,
    /// Sensitivity to the coded Cl2/BCl3 ratio deviation.
    pub ratio: Vec<f64>,
    pub ratio_step: f64,
}

impl ChamberMap {
    pub fn n_states(&self) -> usize {
        self.baseline.len()
    }
}

/// Affine response of one channel (or emission peak) within one etch region:
/// level `a = level + state_gain·Δs + factor_gain·x`, sampled as
/// `a · (1 + slope · τ)` with `τ` seconds since the region started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionResponse {
    pub level: f64,
    pub state_gain: Vec<f64>,
    pub factor_gain: [f64; 5],
    pub slope: f64,
}

impl RegionResponse {
    pub fn amplitude(&self, state_delta: &[f64], coded: &[f64; 5]) -> f64 {
        self.level
            + dot(&self.state_gain, state_delta)
            + self.factor_gain.iter().zip(coded).map(|(g, x)| g * x).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelResponse {
    pub name: String,
    pub regions: [RegionResponse; 3],
    /// Per-sample white noise.
    pub noise_sigma: f64,
    /// Wafer-to-wafer jitter of the channel level.
    pub wafer_sigma: f64,
    /// Additive drift per wafer index.
    pub drift_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionPeak {
    /// Centre position in fractional raw-line index (0-based).
    pub line: f64,
    pub width: f64,
    pub regions: [RegionResponse; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrometer {
    pub gain: f64,
    /// Per-sample noise on every raw line.
    pub line_noise_sigma: f64,
    pub drift_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OesModel {
    pub n_bins: usize,
    pub wavelength_range: (f64, f64),
    /// Continuum level under the peaks; follows the chamber state like a peak.
    pub background: [RegionResponse; 3],
    pub peaks: Vec<EmissionPeak>,
    pub spectrometers: Vec<Spectrometer>,
    /// Wafer-to-wafer jitter of peak amplitudes, relative.
    pub peak_jitter: f64,
}

impl OesModel {
    /// Channel names: binned band centre wavelength and spectrometer.
    pub fn channel_names(&self) -> Vec<String> {
        let bands = crate::pretreat::band_edges(RAW_SPECTRAL_LINES, self.n_bins)
            .expect("n_bins validated at construction");
        let (lo, hi) = self.wavelength_range;
        let per_line = (hi - lo) / (RAW_SPECTRAL_LINES - 1) as f64;
        let mut names = Vec::with_capacity(bands.len() * self.spectrometers.len());
        for s in 1..=self.spectrometers.len() {
            for &(start, end) in &bands {
                let centre = lo + per_line * (start + end - 1) as f64 / 2.0;
                names.push(format!("{centre:.1}_S{s}"));
            }
        }
        names
    }

    /// Noise-free raw spectrum for a continuum level and peak amplitudes.
    pub fn raw_spectrum(&self, background: f64, amplitudes: &[f64], gain: f64, out: &mut [f64]) {
        out.fill(background * gain);
        for (peak, &amp) in self.peaks.iter().zip(amplitudes) {
            let reach = (4.0 * peak.width).ceil() as isize;
            let centre = peak.line.round() as isize;
            for l in (centre - reach).max(0)..=(centre + reach).min(out.len() as isize - 1) {
                let d = (l as f64 - peak.line) / peak.width;
                out[l as usize] += gain * amp * (-0.5 * d * d).exp();
            }
        }
    }
}

/// Per-die affine map from chamber-state deviations to a wafer-state value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DieResponse {
    pub offset: f64,
    pub state_gain: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaferMap {
    pub lwr: Vec<DieResponse>,
    pub oxide_loss: Vec<DieResponse>,
    /// Metrology noise (microns, angstroms).
    pub lwr_noise: f64,
    pub oxide_loss_noise: f64,
}

/// Sampling layout shared by every simulated wafer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Al, TiN, Ox durations in seconds.
    pub region_durations: [f64; 3],
    /// (period, first-sample offset) for Machine, OES and RFM.
    pub sampling: [(f64, f64); 3],
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            region_durations: [30.0, 15.0, 15.0],
            sampling: [(1.0, 0.0), (1.0, 0.3), (1.0, 0.1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Recipe and step sizes defining coded units.
    pub reference: Recipe,
    pub steps: [f64; 5],
    pub chamber_map: ChamberMap,
    /// Wafer-to-wafer chamber-state jitter, shared by all sensor suites.
    pub state_sigma: f64,
    /// Wafer-to-wafer deviation of the delivered factors from their
    /// setpoints, in physical units.
    pub factor_jitter: [f64; 5],
    pub machine: Vec<ChannelResponse>,
    pub rfm: Vec<ChannelResponse>,
    pub oes: OesModel,
    pub wafer_map: WaferMap,
    pub timing: Timing,
}

/// Knobs for generating a [`GroundTruth`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthSpec {
    pub coefficient_seed: u64,
    pub interaction_strength: f64,
    pub oes_bins: usize,
    pub state_sigma: f64,
    /// Delivered-minus-commanded factor spread (mTorr, W, W, sccm, sccm).
    pub factor_jitter: [f64; 5],
    /// Per-sample noise relative to channel level.
    pub machine_noise: f64,
    pub rfm_noise: f64,
    /// Per-sample raw-line noise relative to the mean line intensity.
    pub oes_noise: f64,
    /// Wafer-to-wafer level jitter relative to channel level.
    pub machine_jitter: f64,
    pub rfm_jitter: f64,
    pub oes_jitter: f64,
    pub lwr_noise: f64,
    pub oxide_loss_noise: f64,
    /// Drift per wafer index relative to channel level.
    pub drift_rate: f64,
}

impl Default for TruthSpec {
    fn default() -> Self {
        TruthSpec::fab_scale()
    }
}

impl TruthSpec {
    /// Zero noise, zero drift.
    pub fn noiseless() -> Self {
        TruthSpec {
            coefficient_seed: 44,
            interaction_strength: 0.3,
            oes_bins: 42,
            state_sigma: 0.0,
            factor_jitter: [0.0; 5],
            machine_noise: 0.0,
            rfm_noise: 0.0,
            oes_noise: 0.0,
            machine_jitter: 0.0,
            rfm_jitter: 0.0,
            oes_jitter: 0.0,
            lwr_noise: 0.0,
            oxide_loss_noise: 0.0,
            drift_rate: 0.0,
        }
    }

    /// Noise levels calibrated so the best pressure model lands near 1 mTorr
    /// RMS on the default design.
    pub fn fab_scale() -> Self {
        TruthSpec {
            state_sigma: 0.015,
            factor_jitter: [1.1, 3.0, 0.5, 0.3, 0.3],
            machine_noise: 0.004,
            rfm_noise: 0.004,
            oes_noise: 0.008,
            machine_jitter: 0.002,
            rfm_jitter: 0.002,
            oes_jitter: 0.001,
            lwr_noise: 0.004,
            oxide_loss_noise: 8.0,
            ..TruthSpec::noiseless()
        }
    }
}

const STATE_NAMES: [&str; 8] = [
    "electron_density",
    "ion_energy",
    "cl_radical",
    "bcl_radical",
    "gas_residence",
    "sheath_voltage",
    "neutral_temp",
    "etch_product",
];

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

impl GroundTruth {
    /// Builds a ground truth from `spec`, coding factors around the design
    /// center.
    pub fn generate(spec: &TruthSpec, design: &DesignSpec) -> GroundTruth {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.coefficient_seed);
        let k = STATE_NAMES.len();

        let mut steps = [1.0; 5];
        for (s, d) in steps.iter_mut().zip(&design.step_sizes) {
            *s = *d;
        }

        // Diagonally dominant over [5 factors | 2 interactions | ratio] so the
        // states determine every basis function.
        let mut linear = vec![[0.0; 5]; k];
        let mut ratio = vec![0.0; k];
        let pairs = [
            (Factor::Pressure, Factor::TopPower),
            (Factor::TopPower, Factor::RfBottom),
        ];
        let mut interactions: Vec<Interaction> = pairs
            .iter()
            .map(|&factors| Interaction {
                factors,
                coefficients: vec![0.0; k],
            })
            .collect();
        for s in 0..k {
            for j in 0..5 {
                linear[s][j] = uniform(&mut rng, -0.3, 0.3) + if s == j { 1.0 } else { 0.0 };
            }
            for (p, inter) in interactions.iter_mut().enumerate() {
                let diag = if s == 5 + p { 1.0 } else { 0.0 };
                inter.coefficients[s] =
                    spec.interaction_strength * (diag + uniform(&mut rng, -0.3, 0.3));
            }
            ratio[s] = uniform(&mut rng, -0.3, 0.3) + if s == 7 { 1.0 } else { 0.0 };
        }
        let chamber_map = ChamberMap {
            state_names: STATE_NAMES.iter().map(|s| s.to_string()).collect(),
            baseline: vec![1.0; k],
            linear,
            interactions,
            ratio,
            ratio_step: 0.5,
        };

        let response = |rng: &mut ChaCha8Rng, level: f64, gain: f64, readback: Option<(usize, f64)>| {
            let mut factor_gain = [0.0; 5];
            let state_gain = match readback {
                Some((j, step)) => {
                    factor_gain[j] = step;
                    vec![0.0; k]
                }
                None => (0..k).map(|_| level * uniform(rng, -gain, gain)).collect(),
            };
            RegionResponse {
                level,
                state_gain,
                factor_gain,
                slope: uniform(rng, 0.001, 0.01),
            }
        };

        let machine = MACHINE_CHANNELS
            .iter()
            .map(|&name| {
                let levels: [f64; 3] = if name == ENDPOINT_CHANNEL {
                    [10.0, 5.0, 1.0]
                } else {
                    let l = uniform(&mut rng, 5.0, 100.0);
                    [l, l * uniform(&mut rng, 0.7, 1.3), l * uniform(&mut rng, 0.7, 1.3)]
                };
                let readback = match name {
                    "tcp_rf_power" => Some((Factor::TopPower.index(), steps[1])),
                    "bias_rf_power" => Some((Factor::RfBottom.index(), steps[2])),
                    "chamber_pressure" => Some((Factor::Pressure.index(), steps[0])),
                    _ => None,
                };
                let (levels, gain) = match readback {
                    Some((j, _)) => ([design.center.factors()[j]; 3], 0.0),
                    None if name == ENDPOINT_CHANNEL => (levels, 0.01),
                    None => (levels, 0.06),
                };
                let regions = levels.map(|l| response(&mut rng, l, gain, readback));
                let level = levels[0];
                ChannelResponse {
                    name: name.to_string(),
                    regions,
                    noise_sigma: spec.machine_noise * level,
                    wafer_sigma: spec.machine_jitter * level,
                    drift_rate: spec.drift_rate * level,
                }
            })
            .collect();

        let rfm = rfm_channel_names()
            .into_iter()
            .map(|name| {
                let l = uniform(&mut rng, 1.0, 50.0);
                let levels = [l * uniform(&mut rng, 0.7, 1.3), l, l * uniform(&mut rng, 0.7, 1.3)];
                let regions = levels.map(|lv| response(&mut rng, lv, 0.06, None));
                ChannelResponse {
                    name,
                    regions,
                    noise_sigma: spec.rfm_noise * l,
                    wafer_sigma: spec.rfm_jitter * l,
                    drift_rate: spec.drift_rate * l,
                }
            })
            .collect();

        let background_level = 20.0;
        let background = [0, 1, 2].map(|_| response(&mut rng, background_level, 0.06, None));
        let n_peaks = 30;
        let peaks = (0..n_peaks)
            .map(|_| {
                let line = uniform(&mut rng, 10.0, RAW_SPECTRAL_LINES as f64 - 10.0);
                let width = uniform(&mut rng, 1.5, 6.0);
                let l = uniform(&mut rng, 100.0, 1000.0);
                let levels = [l * uniform(&mut rng, 0.5, 1.5), l * uniform(&mut rng, 0.5, 1.5), l];
                EmissionPeak {
                    line,
                    width,
                    regions: levels.map(|lv| response(&mut rng, lv, 0.06, None)),
                }
            })
            .collect::<Vec<_>>();
        let mean_line = background_level
            + peaks
                .iter()
                .map(|p| p.regions[0].level * p.width * (2.0 * std::f64::consts::PI).sqrt())
                .sum::<f64>()
                / RAW_SPECTRAL_LINES as f64;
        let spectrometers = [1.0, 0.93, 1.07]
            .into_iter()
            .map(|gain| Spectrometer {
                gain,
                line_noise_sigma: spec.oes_noise * mean_line,
                drift_rate: spec.drift_rate * mean_line,
            })
            .collect();
        let oes = OesModel {
            n_bins: spec.oes_bins.clamp(1, RAW_SPECTRAL_LINES),
            wavelength_range: (200.0, 800.0),
            background,
            peaks,
            spectrometers,
            peak_jitter: spec.oes_jitter,
        };

        // Smooth radial die dependence: centre-to-edge variation.
        let lwr_gain: Vec<f64> = (0..k).map(|_| uniform(&mut rng, -0.02, 0.02)).collect();
        let ox_gain: Vec<f64> = (0..k).map(|_| uniform(&mut rng, -60.0, 60.0)).collect();
        let lwr_curv: Vec<f64> = (0..k).map(|_| uniform(&mut rng, -0.5, 0.5)).collect();
        let ox_curv: Vec<f64> = (0..k).map(|_| uniform(&mut rng, -0.5, 0.5)).collect();
        let (mut lwr, mut oxide_loss) = (Vec::new(), Vec::new());
        for die in 1..=DIE_COUNT {
            let (x, y) = die_position(die);
            let r2 = x * x + y * y;
            lwr.push(DieResponse {
                offset: 0.08 * (1.0 + 0.3 * r2) + 0.005 * x,
                state_gain: (0..k).map(|s| lwr_gain[s] * (1.0 + lwr_curv[s] * r2)).collect(),
            });
            oxide_loss.push(DieResponse {
                offset: 450.0 * (1.0 - 0.15 * r2) + 10.0 * y,
                state_gain: (0..k).map(|s| ox_gain[s] * (1.0 + ox_curv[s] * r2)).collect(),
            });
        }

        GroundTruth {
            reference: design.center,
            steps,
            chamber_map,
            state_sigma: spec.state_sigma,
            factor_jitter: spec.factor_jitter,
            machine,
            rfm,
            oes,
            wafer_map: WaferMap {
                lwr,
                oxide_loss,
                lwr_noise: spec.lwr_noise,
                oxide_loss_noise: spec.oxide_loss_noise,
            },
            timing: Timing::default(),
        }
    }

    /// Recipe factors in coded units relative to the reference recipe.
    pub fn coded(&self, recipe: &Recipe) -> [f64; 5] {
        let mut x = [0.0; 5];
        for (j, f) in recipe.factors().iter().enumerate() {
            x[j] = (f - self.reference.factors()[j]) / self.steps[j];
        }
        x
    }

    /// Chamber-state deviations from baseline, noiseless.
    pub fn chamber_state_delta(&self, recipe: &Recipe) -> Vec<f64> {
        let x = self.coded(recipe);
        let map = &self.chamber_map;
        let ref_ratio = self.reference.cl2_bcl3_ratio;
        let r = (recipe.cl2_bcl3_ratio - ref_ratio) / map.ratio_step;
        (0..map.n_states())
            .map(|s| {
                let mut v = dot(&map.linear[s], &x) + map.ratio[s] * r;
                for inter in &map.interactions {
                    let (a, b) = inter.factors;
                    v += inter.coefficients[s] * x[a.index()] * x[b.index()];
                }
                v
            })
            .collect()
    }

    /// Wafer states from given chamber-state deviations, noiseless.
    pub fn wafer_state_from_delta(&self, delta: &[f64]) -> WaferState {
        let eval = |dies: &[DieResponse]| -> Vec<f64> {
            dies.iter()
                .map(|d| d.offset + dot(&d.state_gain, delta))
                .collect()
        };
        WaferState {
            lwr_per_die: eval(&self.wafer_map.lwr),
            oxide_loss_per_die: eval(&self.wafer_map.oxide_loss),
        }
    }
}

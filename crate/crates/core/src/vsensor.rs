//! Banks of virtual sensors: f⁻¹ models (features → recipe setpoints) and
//! g models (features → per-die wafer state), one model per target, suite
//! and region.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    derive_recipe_targets, EtchRegion, RecipeTarget, SensorSuite, Split, WaferRecord, WaferState,
    DIE_COUNT,
};
use crate::pretreat::{build_feature_matrix, FeatureMatrix, MetricSetConfig};
use crate::regress::{max_components, select_latent_dim, FitConfig, FitReport, RegressionModel, Technique};

/// Feature matrices keyed by suite and region.
pub type FeatureSet = BTreeMap<(SensorSuite, EtchRegion), FeatureMatrix>;

/// One wafer's feature rows keyed by suite and region.
pub type WaferFeatures = BTreeMap<(SensorSuite, EtchRegion), Vec<f64>>;

/// Builds all nine matrices from simulated or loaded records.
pub fn build_feature_set(records: &[WaferRecord], config: &MetricSetConfig) -> Result<FeatureSet> {
    let mut out = FeatureSet::new();
    for suite in SensorSuite::ALL {
        for region in EtchRegion::ALL {
            out.insert((suite, region), build_feature_matrix(records, suite, region, config)?);
        }
    }
    Ok(out)
}

/// Row of every matrix for `wafer_id`.
pub fn wafer_features(set: &FeatureSet, wafer_id: &str) -> Result<WaferFeatures> {
    set.iter()
        .map(|(k, m)| {
            let i = m
                .wafer_ids
                .iter()
                .position(|w| w == wafer_id)
                .ok_or_else(|| Error::Key {
                    key: wafer_id.into(),
                    valid: format!("{} wafers in the {} {} features", m.wafer_ids.len(), k.0, k.1),
                })?;
            Ok((*k, m.data.row(i).iter().copied().collect()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WaferParameter {
    #[serde(rename = "lwr")]
    Lwr,
    #[serde(rename = "oxide_loss")]
    OxideLoss,
}

impl WaferParameter {
    pub const ALL: [WaferParameter; 2] = [WaferParameter::Lwr, WaferParameter::OxideLoss];

    pub fn name(self) -> &'static str {
        match self {
            WaferParameter::Lwr => "lwr",
            WaferParameter::OxideLoss => "oxide_loss",
        }
    }
}

impl fmt::Display for WaferParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What a virtual sensor estimates. Dies are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Recipe(RecipeTarget),
    Wafer(WaferParameter, usize),
}

impl Target {
    pub fn recipe_targets() -> impl Iterator<Item = Target> {
        RecipeTarget::ALL.into_iter().map(Target::Recipe)
    }

    pub fn wafer_targets() -> impl Iterator<Item = Target> {
        WaferParameter::ALL
            .into_iter()
            .flat_map(|p| (1..=DIE_COUNT).map(move |d| Target::Wafer(p, d)))
    }

    pub fn value(&self, label: &WaferLabel) -> Option<f64> {
        match *self {
            Target::Recipe(t) => Some(label.targets[t.index()]),
            Target::Wafer(p, die) => label.wafer_state.as_ref().map(|s| match p {
                WaferParameter::Lwr => s.lwr_per_die[die - 1],
                WaferParameter::OxideLoss => s.oxide_loss_per_die[die - 1],
            }),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Recipe(t) => f.write_str(t.name()),
            Target::Wafer(p, die) => write!(f, "{p}[{die}]"),
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let invalid = || Error::Key {
            key: s.into(),
            valid: format!(
                "{}, lwr[1..={DIE_COUNT}], oxide_loss[1..={DIE_COUNT}]",
                RecipeTarget::ALL.map(RecipeTarget::name).join(", ")
            ),
        };
        if let Some((param, rest)) = s.split_once('[') {
            let param = WaferParameter::ALL
                .into_iter()
                .find(|p| p.name() == param)
                .ok_or_else(invalid)?;
            let die: usize = rest
                .strip_suffix(']')
                .and_then(|d| d.parse().ok())
                .filter(|d| (1..=DIE_COUNT).contains(d))
                .ok_or_else(invalid)?;
            return Ok(Target::Wafer(param, die));
        }
        s.parse().map(Target::Recipe).map_err(|_| invalid())
    }
}

impl Serialize for Target {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Target {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModelKey {
    pub target: Target,
    pub suite: SensorSuite,
    pub region: EtchRegion,
    pub technique: Technique,
}

impl fmt::Display for ModelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}/{}", self.target, self.suite, self.region, self.technique)
    }
}

/// Supervision for one wafer: split tag, nominal setpoint targets and the
/// measured wafer state when available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaferLabel {
    pub wafer_id: String,
    pub split: Split,
    pub targets: [f64; 7],
    pub wafer_state: Option<WaferState>,
}

impl WaferLabel {
    pub fn from_record(record: &WaferRecord) -> Result<WaferLabel> {
        Ok(WaferLabel {
            wafer_id: record.wafer_id.clone(),
            split: record.split,
            targets: derive_recipe_targets(&record.nominal_recipe)?,
            wafer_state: record.wafer_state.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BankKind {
    #[serde(rename = "f_inverse")]
    FInverse,
    #[serde(rename = "g")]
    G,
}

/// Identity of the data and configuration a bank was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub kind: BankKind,
    pub dataset_id: String,
    pub split_seed: u64,
    pub config_hash: String,
    pub technique: Technique,
    pub max_lv: usize,
    pub train_wafers: Vec<String>,
    pub validation_wafers: Vec<String>,
    /// Test wafers present in the dataset and withheld from fitting.
    pub withheld_wafers: Vec<String>,
}

impl TrainingManifest {
    /// Violations of test-set hygiene against the dataset labels.
    pub fn audit(&self, labels: &[WaferLabel]) -> Vec<String> {
        let split: BTreeMap<&str, Split> = labels.iter().map(|l| (l.wafer_id.as_str(), l.split)).collect();
        let mut out = Vec::new();
        for (used, expected) in [(&self.train_wafers, Split::Train), (&self.validation_wafers, Split::Validation)] {
            for w in used {
                match split.get(w.as_str()) {
                    Some(s) if *s == expected => {}
                    Some(s) => out.push(format!("wafer {w} used as {} but tagged {}", expected.name(), s.name())),
                    None => out.push(format!("wafer {w} used as {} but absent from the dataset", expected.name())),
                }
            }
        }
        let fitted: BTreeSet<&String> = self.train_wafers.iter().chain(&self.validation_wafers).collect();
        for w in &self.withheld_wafers {
            if fitted.contains(w) {
                out.push(format!("withheld wafer {w} was used in fitting"));
            }
        }
        out
    }
}

/// A fitted model with its selection record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: RegressionModel,
    pub report: FitReport,
    pub candidates: Vec<FitReport>,
    /// Indices into the full feature matrix when a column filter was used.
    pub columns: Option<Vec<usize>>,
}

impl TrainedModel {
    fn select<'a>(&self, row: &'a [f64]) -> std::borrow::Cow<'a, [f64]> {
        match &self.columns {
            Some(idx) => idx.iter().map(|&j| row[j]).collect::<Vec<_>>().into(),
            None => row.into(),
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        let x = self.select(row);
        Ok(self.model.predict(&DMatrix::from_row_slice(1, x.len(), &x))?[0])
    }

    pub fn predict_matrix(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        match &self.columns {
            Some(idx) => self.model.predict(&x.select_columns(idx)),
            None => self.model.predict(x),
        }
    }
}

mod entries {
    //! Maps with structured keys serialize as entry lists.
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    #[derive(Serialize, Deserialize)]
    struct Entry<K, V> {
        key: K,
        value: V,
    }

    pub fn serialize<K, V, S>(map: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error>
    where
        K: Serialize + Clone,
        V: Serialize,
        S: Serializer,
    {
        s.collect_seq(map.iter().map(|(key, value)| Entry { key: key.clone(), value }))
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        Ok(Vec::<Entry<K, V>>::deserialize(d)?
            .into_iter()
            .map(|e| (e.key, e.value))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualSensorBank {
    pub manifest: TrainingManifest,
    #[serde(with = "entries")]
    pub models: BTreeMap<ModelKey, TrainedModel>,
    /// Keys whose fit failed, with the reason.
    #[serde(with = "entries")]
    pub failures: BTreeMap<ModelKey, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub technique: Technique,
    pub max_lv: usize,
    pub fit: FitConfig,
    pub dataset_id: String,
    pub split_seed: u64,
    pub config_hash: String,
    /// Restrict models to these feature columns (names as in the matrices).
    pub column_filter: Option<BTreeSet<String>>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            technique: Technique::LinearPls,
            max_lv: 10,
            fit: FitConfig::default(),
            dataset_id: String::new(),
            split_seed: 0,
            config_hash: String::new(),
            column_filter: None,
        }
    }
}

fn ids_with(labels: &[WaferLabel], split: Split) -> Vec<String> {
    labels
        .iter()
        .filter(|l| l.split == split)
        .map(|l| l.wafer_id.clone())
        .collect()
}

fn fit_key(
    key: ModelKey,
    features: &FeatureMatrix,
    labels: &BTreeMap<&str, &WaferLabel>,
    train: &[String],
    validation: &[String],
    options: &TrainOptions,
) -> Result<TrainedModel> {
    let columns = match &options.column_filter {
        Some(keep) => {
            let idx: Vec<usize> = features
                .columns
                .iter()
                .enumerate()
                .filter(|(_, c)| keep.contains(*c))
                .map(|(j, _)| j)
                .collect();
            if idx.is_empty() {
                return Err(Error::InsufficientData(format!(
                    "column filter keeps no {} {} features",
                    key.suite, key.region
                )));
            }
            Some(idx)
        }
        None => None,
    };
    let rows = |ids: &[String]| -> Result<(DMatrix<f64>, DVector<f64>)> {
        let m = features.select_rows(ids)?;
        let x = match &columns {
            Some(idx) => m.data.select_columns(idx),
            None => m.data,
        };
        let y = ids
            .iter()
            .map(|id| {
                key.target.value(labels[id.as_str()]).ok_or_else(|| {
                    Error::Dataset(format!("wafer {id} has no measured value for {}", key.target))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok((x, DVector::from_vec(y)))
    };
    let (xt, yt) = rows(train)?;
    let (xv, yv) = rows(validation)?;
    let max_lv = options.max_lv.min(max_components(xt.nrows(), xt.ncols())).max(1);
    let (_, model, candidates) = select_latent_dim(&xt, &yt, &xv, &yv, options.technique, max_lv, &options.fit)?;
    let report = candidates
        .iter()
        .find(|r| r.n_components == model.n_components() || !options.technique.is_latent())
        .cloned()
        .expect("selected candidate has a report");
    if !report.validation_rmse.is_finite() {
        return Err(Error::InsufficientData(format!("non-finite validation RMSE for {key}")));
    }
    Ok(TrainedModel {
        model,
        report,
        candidates,
        columns,
    })
}

/// Trains one model per (target, suite, region) in parallel. Per-key
/// failures are recorded, not fatal.
pub fn train_bank(
    kind: BankKind,
    features: &FeatureSet,
    labels: &[WaferLabel],
    suites: &[SensorSuite],
    regions: &[EtchRegion],
    options: &TrainOptions,
) -> Result<VirtualSensorBank> {
    let train = ids_with(labels, Split::Train);
    let validation = ids_with(labels, Split::Validation);
    if train.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    if validation.is_empty() {
        return Err(Error::Dataset("validation split is empty".into()));
    }
    let by_id: BTreeMap<&str, &WaferLabel> = labels.iter().map(|l| (l.wafer_id.as_str(), l)).collect();
    let targets: Vec<Target> = match kind {
        BankKind::FInverse => Target::recipe_targets().collect(),
        BankKind::G => Target::wafer_targets().collect(),
    };
    let mut keys = Vec::new();
    for &suite in suites {
        for &region in regions {
            if !features.contains_key(&(suite, region)) {
                return Err(Error::Dataset(format!("no {suite} {region} feature matrix")));
            }
            for &target in &targets {
                keys.push(ModelKey {
                    target,
                    suite,
                    region,
                    technique: options.technique,
                });
            }
        }
    }
    keys.sort();
    keys.dedup();

    let results: Vec<(ModelKey, Result<TrainedModel>)> = keys
        .par_iter()
        .map(|&key| {
            let fm = &features[&(key.suite, key.region)];
            (key, fit_key(key, fm, &by_id, &train, &validation, options))
        })
        .collect();

    let mut models = BTreeMap::new();
    let mut failures = BTreeMap::new();
    for (key, r) in results {
        match r {
            Ok(m) => {
                models.insert(key, m);
            }
            Err(e) => {
                failures.insert(key, e.to_string());
            }
        }
    }
    Ok(VirtualSensorBank {
        manifest: TrainingManifest {
            kind,
            dataset_id: options.dataset_id.clone(),
            split_seed: options.split_seed,
            config_hash: options.config_hash.clone(),
            technique: options.technique,
            max_lv: options.max_lv,
            train_wafers: train,
            validation_wafers: validation,
            withheld_wafers: ids_with(labels, Split::Test),
        },
        models,
        failures,
    })
}

fn labels_of(records: &[WaferRecord]) -> Result<Vec<WaferLabel>> {
    records.iter().map(WaferLabel::from_record).collect()
}

/// f⁻¹ bank straight from records with the default metric sets.
pub fn train_finv_bank(
    records: &[WaferRecord],
    suites: &[SensorSuite],
    regions: &[EtchRegion],
    technique: Technique,
    max_lv: usize,
) -> Result<VirtualSensorBank> {
    let features = build_feature_set(records, &MetricSetConfig::default())?;
    let options = TrainOptions {
        technique,
        max_lv,
        ..TrainOptions::default()
    };
    train_bank(BankKind::FInverse, &features, &labels_of(records)?, suites, regions, &options)
}

/// g bank straight from records with the default metric sets.
pub fn train_g_bank(
    records: &[WaferRecord],
    suites: &[SensorSuite],
    regions: &[EtchRegion],
    technique: Technique,
    max_lv: usize,
) -> Result<VirtualSensorBank> {
    let features = build_feature_set(records, &MetricSetConfig::default())?;
    let options = TrainOptions {
        technique,
        max_lv,
        ..TrainOptions::default()
    };
    train_bank(BankKind::G, &features, &labels_of(records)?, suites, regions, &options)
}

/// Bank keys for `target`, ascending by validation RMSE; ties keep
/// (suite, region) enumeration order.
pub fn rank_models(bank: &VirtualSensorBank, target: Target) -> Result<Vec<(ModelKey, f64)>> {
    let mut ranked: Vec<(ModelKey, f64)> = bank
        .models
        .iter()
        .filter(|(k, _)| k.target == target)
        .map(|(k, m)| (*k, m.report.validation_rmse))
        .collect();
    if ranked.is_empty() {
        return Err(Error::Key {
            key: target.to_string(),
            valid: bank
                .models
                .keys()
                .map(|k| k.target.to_string())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect::<Vec<_>>()
                .join(", "),
        });
    }
    // BTreeMap order is already (suite, region) within a target; sort is stable
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(ranked)
}

impl VirtualSensorBank {
    pub fn suites(&self) -> BTreeSet<SensorSuite> {
        self.models.keys().map(|k| k.suite).collect()
    }

    /// Lowest-validation-RMSE key for `target` within `suite`.
    pub fn best_key(&self, target: Target, suite: SensorSuite) -> Option<ModelKey> {
        self.models
            .iter()
            .filter(|(k, _)| k.target == target && k.suite == suite)
            .min_by(|a, b| a.1.report.validation_rmse.total_cmp(&b.1.report.validation_rmse))
            .map(|(k, _)| *k)
    }

    fn predict_key(&self, key: ModelKey, features: &WaferFeatures) -> Result<f64> {
        let row = features.get(&(key.suite, key.region)).ok_or_else(|| Error::MissingData {
            wafer: String::new(),
            channel: format!("{} {} features", key.suite, key.region),
        })?;
        self.models[&key].predict_row(row)
    }
}

/// Per-suite setpoint estimate with the key chosen for each target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetpointEstimate {
    pub values: [f64; 7],
    pub keys: Vec<Option<ModelKey>>,
}

/// Estimates the seven setpoints per suite, each from its best region.
/// Targets without a usable model come out NaN.
pub fn predict_setpoints(
    bank: &VirtualSensorBank,
    features: &WaferFeatures,
) -> Result<BTreeMap<SensorSuite, SetpointEstimate>> {
    let mut out = BTreeMap::new();
    for suite in bank.suites() {
        let mut est = SetpointEstimate {
            values: [f64::NAN; 7],
            keys: vec![None; 7],
        };
        for t in RecipeTarget::ALL {
            if let Some(key) = bank.best_key(Target::Recipe(t), suite) {
                est.values[t.index()] = bank.predict_key(key, features)?;
                est.keys[t.index()] = Some(key);
            }
        }
        out.insert(suite, est);
    }
    Ok(out)
}

/// Per-die wafer-state estimate; `None` marks dies without a usable model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEstimate {
    pub lwr: Vec<Option<f64>>,
    pub oxide_loss: Vec<Option<f64>>,
}

impl StateEstimate {
    pub fn get(&self, p: WaferParameter) -> &[Option<f64>] {
        match p {
            WaferParameter::Lwr => &self.lwr,
            WaferParameter::OxideLoss => &self.oxide_loss,
        }
    }
}

pub fn predict_wafer_state(
    bank: &VirtualSensorBank,
    features: &WaferFeatures,
) -> Result<BTreeMap<SensorSuite, StateEstimate>> {
    let mut out = BTreeMap::new();
    for suite in bank.suites() {
        let per = |p| -> Result<Vec<Option<f64>>> {
            (1..=DIE_COUNT)
                .map(|die| match bank.best_key(Target::Wafer(p, die), suite) {
                    Some(key) => bank.predict_key(key, features).map(Some),
                    None => Ok(None),
                })
                .collect()
        };
        let est = StateEstimate {
            lwr: per(WaferParameter::Lwr)?,
            oxide_loss: per(WaferParameter::OxideLoss)?,
        };
        out.insert(suite, est);
    }
    Ok(out)
}

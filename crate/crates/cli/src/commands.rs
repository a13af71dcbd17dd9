use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde_json::json;

use vsfdc::config::RunConfig;
use vsfdc::fdc::{classify_quality, detect as detect_wafer, setpoint_values, with_quality};
use vsfdc::gasel::{evolve, fitness, selected_columns, SelectionData};
use vsfdc::model::{EtchRegion, SensorSuite, Split, WaferRecord};
use vsfdc::persist::{self, ModelBundle};
use vsfdc::sim::{simulate_doe, simulate_wafer, FaultScenario, GroundTruth};
use vsfdc::vsensor::{
    build_feature_set, predict_setpoints, predict_wafer_state, rank_models, train_bank, wafer_features, BankKind,
    Target, TrainOptions, VirtualSensorBank, WaferLabel,
};
use vsfdc::{Error, Result};

use nalgebra::{DMatrix, DVector};

/// `println!` that ends the process quietly once stdout is closed, as when
/// piped into `head`.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        if let Err(e) = writeln!(std::io::stdout(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            eprintln!("error: cannot write to stdout: {e}");
            std::process::exit(3);
        }
    }};
}

pub const BUNDLE_FILE: &str = "bundle.vsfdc";
pub const REPORT_DIR: &str = "reports";
pub const GA_DIR: &str = "ga";

fn features_dir(config: &RunConfig) -> PathBuf {
    config.paths.output.join(persist::FEATURE_DIR)
}

/// The designed experiment plus any configured extra wafers.
pub fn simulate(config: &RunConfig) -> Result<()> {
    let truth = GroundTruth::generate(&config.truth, &config.design);
    let mut records = simulate_doe(&config.design, &truth, &FaultScenario::none(), config.splits, config.seed)?;
    let mut extras = Vec::new();
    for run in &config.extra_wafers {
        let scenario = FaultScenario::new(run.fault.clone(), 0);
        for _ in 0..run.count {
            let index = records.len();
            let record = simulate_wafer(
                &config.design.center,
                &truth,
                &scenario,
                index,
                config.seed.wrapping_add(index as u64),
            );
            extras.push(json!({ "wafer_id": record.wafer_id, "fault": run.fault }));
            records.push(record);
        }
    }
    let dir = &config.paths.dataset;
    persist::write_dataset(dir, &records)?;
    let sidecar = json!({
        "seed": config.seed,
        "design": config.design,
        "splits": config.splits,
        "truth_spec": config.truth,
        "extra_wafers": extras,
        "ground_truth": truth,
    });
    persist::write_json(&dir.join(persist::GROUND_TRUTH_FILE), &sidecar)?;

    let count = |s: Split| records.iter().filter(|r| r.split == s).count();
    say!(
        "simulated {} wafers (train {}, validation {}, test {}, unassigned {}) into {}",
        records.len(),
        count(Split::Train),
        count(Split::Validation),
        count(Split::Test),
        count(Split::Unassigned),
        dir.display()
    );
    Ok(())
}

pub fn pretreat(config: &RunConfig) -> Result<()> {
    let records = persist::read_dataset(&config.paths.dataset)?;
    let set = build_feature_set(&records, &config.metrics)?;
    let dir = features_dir(config);
    persist::write_feature_set(&dir, &set)?;
    for ((suite, region), m) in &set {
        say!(
            "{:<7} {:<3} {:>4} rows {:>4} features -> {}",
            suite.name(),
            region.name(),
            m.nrows(),
            m.ncols(),
            dir.join(persist::feature_file_name(*suite, *region)).display()
        );
    }
    Ok(())
}

fn labels(records: &[WaferRecord]) -> Result<Vec<WaferLabel>> {
    records.iter().map(WaferLabel::from_record).collect()
}

fn print_ranking(bank: &VirtualSensorBank, targets: impl Iterator<Item = Target>, all: bool) {
    for target in targets {
        let Ok(ranked) = rank_models(bank, target) else {
            say!("{target}: no model");
            continue;
        };
        let shown = if all { ranked.len() } else { 1 };
        for (rank, (key, rmse)) in ranked.iter().take(shown).enumerate() {
            let lv = bank.models[key].model.n_components();
            say!(
                "{:<16} {:>2}  {:<7} {:<3} {:<9} lv={:<2} validation_rmse={:.6}",
                target.to_string(),
                rank + 1,
                key.suite.name(),
                key.region.name(),
                key.technique.name(),
                lv,
                rmse
            );
        }
    }
}

fn summarize_failures(bank: &VirtualSensorBank) {
    if bank.failures.is_empty() {
        return;
    }
    eprintln!("{} model(s) failed to train:", bank.failures.len());
    for (key, reason) in bank.failures.iter().take(10) {
        eprintln!("  {key}: {reason}");
    }
    if bank.failures.len() > 10 {
        eprintln!("  ...");
    }
}

pub fn train(config: &RunConfig, suites: &[SensorSuite], regions: &[EtchRegion]) -> Result<()> {
    let dataset = &config.paths.dataset;
    let records = persist::read_manifest(dataset)?;
    let labels = labels(&records)?;
    let features = persist::read_feature_set(&features_dir(config))?;
    for m in features.values() {
        let known: BTreeSet<&String> = records.iter().map(|r| &r.wafer_id).collect();
        if let Some(stray) = m.wafer_ids.iter().find(|w| !known.contains(w)) {
            return Err(Error::Dataset(format!(
                "{} {} features hold wafer {stray}, absent from the manifest",
                m.suite, m.region
            )));
        }
    }
    let suites: Vec<SensorSuite> = if suites.is_empty() { SensorSuite::ALL.to_vec() } else { suites.to_vec() };
    let regions: Vec<EtchRegion> = if regions.is_empty() { EtchRegion::ALL.to_vec() } else { regions.to_vec() };
    let options = TrainOptions {
        technique: config.model.technique,
        max_lv: config.model.max_lv,
        fit: config.model.fit,
        dataset_id: persist::dataset_id(dataset)?,
        split_seed: config.seed,
        config_hash: config.hash(),
        column_filter: None,
    };
    let f_inverse = train_bank(BankKind::FInverse, &features, &labels, &suites, &regions, &options)?;
    let g = train_bank(BankKind::G, &features, &labels, &suites, &regions, &options)?;

    say!("f-inverse models (validation RMSE, best first)");
    print_ranking(&f_inverse, Target::recipe_targets(), true);
    say!("g models (best per target)");
    print_ranking(&g, Target::wafer_targets(), false);
    summarize_failures(&f_inverse);
    summarize_failures(&g);

    for (name, bank) in [("f-inverse", &f_inverse), ("g", &g)] {
        if bank.models.is_empty() {
            return Err(Error::InsufficientData(format!("the {name} bank has no trained models")));
        }
    }
    let path = config.paths.output.join(BUNDLE_FILE);
    persist::save_model_bundle(&ModelBundle { f_inverse, g }, &path)?;
    say!("bundle written to {}", path.display());
    Ok(())
}

/// Writes one report per wafer and returns whether any wafer is faulty.
pub fn detect(config: &RunConfig, wafer_ids: &[String]) -> Result<bool> {
    let bundle = persist::load_model_bundle(&config.paths.output.join(BUNDLE_FILE))?;
    let features = persist::read_feature_set(&features_dir(config))?;
    let records = persist::read_manifest(&config.paths.dataset)?;
    let by_id: BTreeMap<&str, &WaferRecord> = records.iter().map(|r| (r.wafer_id.as_str(), r)).collect();
    let ids: Vec<String> = if wafer_ids.is_empty() {
        records
            .iter()
            .filter(|r| matches!(r.split, Split::Test | Split::Unassigned))
            .map(|r| r.wafer_id.clone())
            .collect()
    } else {
        wafer_ids.to_vec()
    };
    for id in &ids {
        if !by_id.contains_key(id.as_str()) {
            return Err(Error::Key {
                key: id.clone(),
                valid: format!("{} wafer ids listed in the manifest", records.len()),
            });
        }
    }

    let dir = config.paths.output.join(REPORT_DIR);
    let mut any_fault = false;
    for id in &ids {
        let wf = wafer_features(&features, id)?;
        let estimates = predict_setpoints(&bundle.f_inverse, &wf)?;
        let mut report = detect_wafer(id, &by_id[id.as_str()].nominal_recipe, &setpoint_values(&estimates), &config.tolerance)?;
        if !bundle.g.models.is_empty() {
            let states = predict_wafer_state(&bundle.g, &wf)?;
            report = with_quality(report, classify_quality(&states, &config.quality, &config.consensus));
        }
        persist::write_report(&dir, &report)?;
        say!("wafer {}: {}", report.wafer_id, report.classification);
        any_fault |= report.classification.is_fault();
    }
    Ok(any_fault)
}

fn file_token(target: &Target) -> String {
    target.to_string().replace('[', "_").replace(']', "")
}

pub fn ga_select(config: &RunConfig, target: &str, suite: SensorSuite, region: EtchRegion) -> Result<()> {
    let target: Target = target.parse()?;
    let records = persist::read_manifest(&config.paths.dataset)?;
    let labels = labels(&records)?;
    let features = persist::read_feature_set(&features_dir(config))?;
    let matrix = features
        .get(&(suite, region))
        .ok_or_else(|| Error::Dataset(format!("no {suite} {region} feature matrix")))?;

    let rows = |split: Split| -> Result<(DMatrix<f64>, DVector<f64>)> {
        let chosen: Vec<&WaferLabel> = labels.iter().filter(|l| l.split == split).collect();
        let ids: Vec<String> = chosen.iter().map(|l| l.wafer_id.clone()).collect();
        let y = chosen
            .iter()
            .map(|l| {
                target
                    .value(l)
                    .ok_or_else(|| Error::Dataset(format!("wafer {} has no value for {target}", l.wafer_id)))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok((matrix.select_rows(&ids)?.data, DVector::from_vec(y)))
    };
    let (x_tr, y_tr) = rows(Split::Train)?;
    let (x_val, y_val) = rows(Split::Validation)?;
    let data = SelectionData {
        x_tr: &x_tr,
        y_tr: &y_tr,
        x_val: &x_val,
        y_val: &y_val,
    };
    let technique = config.model.technique;
    let result = evolve(&data, technique, &config.ga)?;
    let all = fitness(&vec![true; matrix.ncols()], &data, technique, config.ga.max_lv, 1)?;

    let dir = config.paths.output.join(GA_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    let stem = format!("{}_{}_{}", file_token(&target), suite.slug(), region.name().to_ascii_lowercase());
    let columns = selected_columns(&result.best.mask, &matrix.columns);
    let columns_path = dir.join(format!("{stem}_columns.txt"));
    let history_path = dir.join(format!("{stem}_history.csv"));
    persist::write_selected_columns(&columns_path, &columns)?;
    persist::write_ga_history(&history_path, &result.history)?;
    say!(
        "{target} {suite} {region}: {} of {} columns, validation RMSE {:.6} (all columns {:.6})",
        columns.len(),
        matrix.ncols(),
        result.best.fitness.unwrap_or(f64::NAN),
        all
    );
    say!("columns -> {}", columns_path.display());
    say!("history -> {}", history_path.display());
    Ok(())
}

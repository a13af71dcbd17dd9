//! On-disk formats: dataset CSVs, feature matrices, model bundles, fault
//! reports and GA outputs.
//!
//! Floats are written in Rust's shortest round-trip decimal form, so every
//! reader recovers the written value bit for bit.

mod bundle;
mod dataset;

pub use bundle::{decode_bundle, encode_bundle, load_model_bundle, save_model_bundle, ModelBundle, BUNDLE_VERSION};
pub use dataset::{
    dataset_id, feature_file_name, read_dataset, read_feature_matrix, read_feature_set, read_manifest,
    trace_file_name, write_dataset, write_feature_matrix, write_feature_set, FEATURE_DIR,
    GROUND_TRUTH_FILE, MANIFEST_FILE, REGIONS_FILE, TRACE_DIR,
};

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fdc::FaultReport;
use crate::gasel::GenerationStats;

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes through a sibling temp file and renames, so readers never see a
/// half-written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Dataset(format!("cannot serialize {}: {e}", path.display())))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// Writes `<dir>/<wafer>.txt` and `<dir>/<wafer>.json`.
pub fn write_report(dir: &Path, report: &FaultReport) -> Result<()> {
    create_dir(dir)?;
    write_atomic(&dir.join(format!("{}.txt", report.wafer_id)), report.render_text().as_bytes())?;
    write_json(&dir.join(format!("{}.json", report.wafer_id)), report)
}

/// One selected column name per line.
pub fn write_selected_columns(path: &Path, columns: &[String]) -> Result<()> {
    let mut s = String::new();
    for c in columns {
        s += c;
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

pub fn write_ga_history(path: &Path, history: &[GenerationStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Dataset(format!("{}: {e}", path.display()));
    w.write_record(["generation", "best", "mean", "best_ever"]).map_err(io)?;
    for g in history {
        w.write_record([
            g.generation.to_string(),
            g.best.to_string(),
            g.mean.to_string(),
            g.best_ever.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Dataset(e.to_string()))?;
    write_atomic(path, &bytes)
}

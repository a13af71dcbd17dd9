use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use super::{create_dir, write_atomic};
use crate::error::{Error, Result};
use crate::model::{
    derive_recipe_targets, EtchRegion, Recipe, RecipeTarget, RegionWindows, SensorSuite,
    SensorTrace, Split, WaferRecord, WaferState, Window, DIE_COUNT,
};
use crate::pretreat::FeatureMatrix;
use crate::vsensor::FeatureSet;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const REGIONS_FILE: &str = "regions.csv";
pub const TRACE_DIR: &str = "traces";
pub const FEATURE_DIR: &str = "features";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

pub fn trace_file_name(wafer_id: &str, suite: SensorSuite) -> String {
    format!("{wafer_id}_{}.csv", suite.slug())
}

pub fn feature_file_name(suite: SensorSuite, region: EtchRegion) -> String {
    format!("{}_{}.csv", suite.slug(), region.name().to_ascii_lowercase())
}

fn manifest_header() -> Vec<String> {
    let mut h: Vec<String> = ["wafer_id", "lot_id", "split"].map(String::from).to_vec();
    for prefix in ["nominal", "actual"] {
        h.extend(RecipeTarget::ALL.map(|t| format!("{prefix}_{}", t.name())));
    }
    for p in ["lwr", "oxide_loss"] {
        h.extend((1..=DIE_COUNT).map(|d| format!("{p}_{d}")));
    }
    h
}

const REGIONS_HEADER: [&str; 7] = ["wafer_id", "al_start", "al_end", "tin_start", "tin_end", "ox_start", "ox_end"];

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.position() {
        Some(pos) => Error::Parse {
            path: path.to_path_buf(),
            line: pos.line(),
            msg: e.to_string(),
        },
        None => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            kind => Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: format!("{kind:?}"),
            },
        },
    }
}

fn finish(path: &Path, w: csv::Writer<Vec<u8>>) -> Result<()> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    write_atomic(path, &bytes)
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

/// Reader over a CSV file whose header must equal `expected` when given.
struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn open(path: &Path) -> Result<Table> {
        if !path.exists() {
            return Err(Error::io(path, std::io::ErrorKind::NotFound.into()));
        }
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let header = r
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(String::from)
            .collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Table {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn expect_header(&self, expected: &[String]) -> Result<()> {
        if self.header != expected {
            let at = self
                .header
                .iter()
                .zip(expected)
                .position(|(a, b)| a != b)
                .unwrap_or(self.header.len().min(expected.len()));
            return Err(self.error(
                1,
                format!(
                    "unexpected header at column {}: got {:?}, expected {:?}",
                    at + 1,
                    self.header.get(at),
                    expected.get(at)
                ),
            ));
        }
        Ok(())
    }

    fn error(&self, line: u64, msg: String) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            msg,
        }
    }

    fn float(&self, line: u64, rec: &csv::StringRecord, j: usize) -> Result<f64> {
        let s = rec.get(j).unwrap_or("");
        s.parse().map_err(|_| {
            self.error(
                line,
                format!("column `{}`: `{s}` is not a number", self.header.get(j).map_or("?", |h| h.as_str())),
            )
        })
    }

    /// Empty cell as `None`.
    fn opt_float(&self, line: u64, rec: &csv::StringRecord, j: usize) -> Result<Option<f64>> {
        if rec.get(j).is_none_or(str::is_empty) {
            Ok(None)
        } else {
            self.float(line, rec, j).map(Some)
        }
    }
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn write_manifest(path: &Path, records: &[WaferRecord]) -> Result<()> {
    let mut w = writer();
    let err = |e| csv_error(path, e);
    w.write_record(manifest_header()).map_err(err)?;
    for r in records {
        let mut row = vec![r.wafer_id.clone(), r.lot_id.clone(), r.split.name().to_string()];
        row.extend(derive_recipe_targets(&r.nominal_recipe)?.map(fmt));
        match &r.actual_recipe {
            Some(a) => row.extend(derive_recipe_targets(a)?.map(fmt)),
            None => row.extend(std::iter::repeat_n(String::new(), 7)),
        }
        match &r.wafer_state {
            Some(s) => {
                row.extend(s.lwr_per_die.iter().map(|v| fmt(*v)));
                row.extend(s.oxide_loss_per_die.iter().map(|v| fmt(*v)));
            }
            None => row.extend(std::iter::repeat_n(String::new(), 2 * DIE_COUNT)),
        }
        w.write_record(&row).map_err(err)?;
    }
    finish(path, w)
}

/// Manifest rows as records without traces.
pub fn read_manifest(dir: &Path) -> Result<Vec<WaferRecord>> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::Dataset(format!("no {MANIFEST_FILE} in {}", dir.display())));
    }
    let t = Table::open(&path)?;
    t.expect_header(&manifest_header())?;
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let line = *line;
        let split: Split = rec[2].parse().map_err(|e: Error| t.error(line, e.to_string()))?;
        let recipe_at = |start: usize| -> Result<Option<Recipe>> {
            let v = (0..5)
                .map(|k| t.opt_float(line, rec, start + k))
                .collect::<Result<Vec<_>>>()?;
            match v.iter().filter(|x| x.is_some()).count() {
                0 => Ok(None),
                5 => Ok(Some(Recipe::from_factors(std::array::from_fn(|k| v[k].unwrap())))),
                _ => Err(t.error(line, "recipe columns partially empty".into())),
            }
        };
        let nominal = recipe_at(3)?.ok_or_else(|| t.error(line, "nominal recipe is empty".into()))?;
        let actual = recipe_at(10)?;
        let state_start = 17;
        let values = (0..2 * DIE_COUNT)
            .map(|k| t.opt_float(line, rec, state_start + k))
            .collect::<Result<Vec<_>>>()?;
        let wafer_state = match values.iter().filter(|x| x.is_some()).count() {
            0 => None,
            n if n == 2 * DIE_COUNT => {
                let v: Vec<f64> = values.into_iter().flatten().collect();
                Some(WaferState {
                    lwr_per_die: v[..DIE_COUNT].to_vec(),
                    oxide_loss_per_die: v[DIE_COUNT..].to_vec(),
                })
            }
            _ => return Err(t.error(line, "wafer-state columns partially empty".into())),
        };
        out.push(WaferRecord {
            wafer_id: rec[0].to_string(),
            lot_id: rec[1].to_string(),
            nominal_recipe: nominal,
            actual_recipe: actual,
            traces: Vec::new(),
            wafer_state,
            split,
        });
    }
    Ok(out)
}

fn write_regions(path: &Path, records: &[WaferRecord]) -> Result<()> {
    let mut w = writer();
    let err = |e| csv_error(path, e);
    w.write_record(REGIONS_HEADER).map_err(err)?;
    for r in records {
        let Some(windows) = r.traces.iter().find_map(|t| t.region_windows) else {
            continue;
        };
        let mut row = vec![r.wafer_id.clone()];
        for win in windows.0 {
            row.push(fmt(win.start));
            row.push(fmt(win.end));
        }
        w.write_record(&row).map_err(err)?;
    }
    finish(path, w)
}

fn read_regions(path: &Path) -> Result<BTreeMap<String, RegionWindows>> {
    let t = Table::open(path)?;
    t.expect_header(&REGIONS_HEADER.map(String::from))?;
    let mut out = BTreeMap::new();
    for (line, rec) in &t.rows {
        let v = (1..7).map(|j| t.float(*line, rec, j)).collect::<Result<Vec<_>>>()?;
        let win = |k: usize| Window {
            start: v[2 * k],
            end: v[2 * k + 1],
        };
        out.insert(rec[0].to_string(), RegionWindows([win(0), win(1), win(2)]));
    }
    Ok(out)
}

fn write_trace_file(path: &Path, traces: &[&SensorTrace]) -> Result<()> {
    let mut w = writer();
    let err = |e| csv_error(path, e);
    let mut header = vec!["time_s".to_string()];
    header.extend(traces.iter().map(|t| t.channel.clone()));
    w.write_record(&header).map_err(err)?;
    let times = &traces[0].times;
    for tr in traces {
        if tr.times != *times {
            return Err(Error::Dataset(format!(
                "wafer {} {} channel {} has its own time base; one file needs a shared one",
                tr.wafer_id, tr.suite, tr.channel
            )));
        }
    }
    for (i, t) in times.iter().enumerate() {
        let mut row = vec![fmt(*t)];
        row.extend(traces.iter().map(|tr| fmt(tr.values[i])));
        w.write_record(&row).map_err(err)?;
    }
    finish(path, w)
}

fn read_trace_file(
    path: &Path,
    wafer_id: &str,
    suite: SensorSuite,
    windows: Option<RegionWindows>,
) -> Result<Vec<SensorTrace>> {
    let t = Table::open(path)?;
    if t.header.first().map(String::as_str) != Some("time_s") {
        return Err(t.error(1, "first column must be time_s".into()));
    }
    let n = t.header.len() - 1;
    let mut times = Vec::with_capacity(t.rows.len());
    let mut values = vec![Vec::with_capacity(t.rows.len()); n];
    for (line, rec) in &t.rows {
        times.push(t.float(*line, rec, 0)?);
        for (j, col) in values.iter_mut().enumerate() {
            col.push(t.float(*line, rec, j + 1)?);
        }
    }
    Ok(t.header[1..]
        .iter()
        .zip(values)
        .map(|(channel, values)| SensorTrace {
            wafer_id: wafer_id.to_string(),
            suite,
            channel: channel.clone(),
            times: times.clone(),
            values,
            region_windows: windows,
        })
        .collect())
}

/// SHA-256 of the manifest file, identifying the dataset in bank manifests.
pub fn dataset_id(dir: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let path = dir.join(MANIFEST_FILE);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes manifest, region windows and per-wafer, per-suite trace files.
pub fn write_dataset(dir: &Path, records: &[WaferRecord]) -> Result<()> {
    let trace_dir = dir.join(TRACE_DIR);
    create_dir(&trace_dir)?;
    write_manifest(&dir.join(MANIFEST_FILE), records)?;
    write_regions(&dir.join(REGIONS_FILE), records)?;
    for r in records {
        for suite in SensorSuite::ALL {
            let traces: Vec<&SensorTrace> = r.traces.iter().filter(|t| t.suite == suite).collect();
            if !traces.is_empty() {
                write_trace_file(&trace_dir.join(trace_file_name(&r.wafer_id, suite)), &traces)?;
            }
        }
    }
    Ok(())
}

/// Reads a dataset written by [`write_dataset`]. Every manifest wafer needs
/// a trace file for each suite.
pub fn read_dataset(dir: &Path) -> Result<Vec<WaferRecord>> {
    let mut records = read_manifest(dir)?;
    let regions_path = dir.join(REGIONS_FILE);
    let regions = if regions_path.exists() {
        read_regions(&regions_path)?
    } else {
        BTreeMap::new()
    };
    let trace_dir = dir.join(TRACE_DIR);
    for r in records.iter_mut() {
        let windows = regions.get(&r.wafer_id).copied();
        for suite in SensorSuite::ALL {
            let path = trace_dir.join(trace_file_name(&r.wafer_id, suite));
            if !path.exists() {
                return Err(Error::MissingData {
                    wafer: r.wafer_id.clone(),
                    channel: format!("{suite} traces ({})", path.display()),
                });
            }
            r.traces.extend(read_trace_file(&path, &r.wafer_id, suite, windows)?);
        }
    }
    Ok(records)
}

pub fn write_feature_matrix(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let mut w = writer();
    let err = |e| csv_error(path, e);
    let mut header = vec!["wafer_id".to_string()];
    header.extend(m.columns.iter().cloned());
    w.write_record(&header).map_err(err)?;
    for (i, id) in m.wafer_ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(m.data.row(i).iter().map(|v| fmt(*v)));
        w.write_record(&row).map_err(err)?;
    }
    finish(path, w)
}

pub fn read_feature_matrix(path: &Path, suite: SensorSuite, region: EtchRegion) -> Result<FeatureMatrix> {
    let t = Table::open(path)?;
    if t.header.first().map(String::as_str) != Some("wafer_id") {
        return Err(t.error(1, "first column must be wafer_id".into()));
    }
    let ncols = t.header.len() - 1;
    let mut ids = Vec::with_capacity(t.rows.len());
    let mut values = Vec::with_capacity(t.rows.len() * ncols);
    for (line, rec) in &t.rows {
        ids.push(rec[0].to_string());
        for j in 1..=ncols {
            values.push(t.float(*line, rec, j)?);
        }
    }
    Ok(FeatureMatrix {
        suite,
        region,
        wafer_ids: ids,
        columns: t.header[1..].to_vec(),
        data: DMatrix::from_row_slice(t.rows.len(), ncols, &values),
    })
}

/// Writes one file per matrix under `dir`.
pub fn write_feature_set(dir: &Path, set: &FeatureSet) -> Result<()> {
    create_dir(dir)?;
    for ((suite, region), m) in set {
        write_feature_matrix(&dir.join(feature_file_name(*suite, *region)), m)?;
    }
    Ok(())
}

/// Reads every suite × region matrix present under `dir`.
pub fn read_feature_set(dir: &Path) -> Result<FeatureSet> {
    let mut out = FeatureSet::new();
    for suite in SensorSuite::ALL {
        for region in EtchRegion::ALL {
            let path = dir.join(feature_file_name(suite, region));
            if path.exists() {
                out.insert((suite, region), read_feature_matrix(&path, suite, region)?);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!("no feature matrices in {}", dir.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, split: Split, state: bool) -> WaferRecord {
        let windows = RegionWindows([
            Window { start: 0.0, end: 1.5 },
            Window { start: 1.5, end: 2.5 },
            Window { start: 2.5, end: 4.0 },
        ]);
        let trace = |suite, channel: &str, scale: f64| SensorTrace {
            wafer_id: id.into(),
            suite,
            channel: channel.into(),
            times: vec![0.0, 0.1, 1.0 / 3.0, 3.9],
            values: vec![scale, scale * 0.1, scale / 3.0, -scale * 1e-17],
            region_windows: Some(windows),
        };
        WaferRecord {
            wafer_id: id.into(),
            lot_id: "L1".into(),
            nominal_recipe: Recipe::new(9.0, 350.0, 150.0, 40.0, 60.0),
            actual_recipe: Some(Recipe::new(9.1, 351.7, 149.9, 40.0, 60.3)),
            traces: vec![
                trace(SensorSuite::Machine, "Pressure", 1.0),
                trace(SensorSuite::Machine, "Endpoint_A", 2.0),
                trace(SensorSuite::Oes, "500.1_S1", 3.0),
                trace(SensorSuite::Rfm, "S1V1", 4.0),
            ],
            wafer_state: state.then(|| WaferState {
                lwr_per_die: (0..DIE_COUNT).map(|d| 0.1 + d as f64 / 7.0).collect(),
                oxide_loss_per_die: (0..DIE_COUNT).map(|d| 400.0 + d as f64 / 3.0).collect(),
            }),
            split,
        }
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![record("W001", Split::Train, true), record("W002", Split::Test, false)];
        write_dataset(dir.path(), &recs).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), recs);
        let header = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let cols: Vec<&str> = header.lines().next().unwrap().split(',').collect();
        assert_eq!(cols.len(), 3 + 7 + 7 + 64);
        assert_eq!(cols[..4], ["wafer_id", "lot_id", "split", "nominal_pressure"]);
        let trace = std::fs::read_to_string(dir.path().join(TRACE_DIR).join("W001_machine.csv")).unwrap();
        assert!(trace.starts_with("time_s,Pressure,Endpoint_A\n"));
    }

    #[test]
    fn missing_trace_names_the_wafer() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[record("W001", Split::Train, true)]).unwrap();
        std::fs::remove_file(dir.path().join(TRACE_DIR).join("W001_rfm.csv")).unwrap();
        match read_dataset(dir.path()) {
            Err(Error::MissingData { wafer, channel }) => {
                assert_eq!(wafer, "W001");
                assert!(channel.contains("RFM"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_dir_is_a_dataset_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Dataset(_))));
        assert!(matches!(read_feature_set(dir.path()), Err(Error::Dataset(_))));
    }

    #[test]
    fn corrupt_feature_cell_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "wafer_id,a|Al|avg,b|Al|avg\nW001,1,2\nW002,3,x\n").unwrap();
        match read_feature_matrix(&path, SensorSuite::Machine, EtchRegion::Al) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("b|Al|avg"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, "wafer_id,a\nW001,1\nW002,3,4\n").unwrap();
        assert!(matches!(
            read_feature_matrix(&path, SensorSuite::Machine, EtchRegion::Al),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn feature_matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = FeatureMatrix {
            suite: SensorSuite::Rfm,
            region: EtchRegion::TiN,
            wafer_ids: vec!["W002".into(), "W001".into()],
            columns: vec!["S1V1|TiN|max".into(), "S1V1|TiN|ssr".into()],
            data: DMatrix::from_row_slice(2, 2, &[0.1 + 0.2, 1e-300, -7.25, f64::MAX]),
        };
        let mut set = FeatureSet::new();
        set.insert((m.suite, m.region), m.clone());
        write_feature_set(dir.path(), &set).unwrap();
        assert!(dir.path().join("rfm_tin.csv").exists());
        assert_eq!(read_feature_set(dir.path()).unwrap(), set);
    }
}

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{extract_metrics, MetricKind};
use crate::error::{Error, Result};
use crate::model::{EtchRegion, SensorSuite, WaferRecord};

/// Metric kinds computed for each (suite, region) pair. Order within a set
/// is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NestedSets", try_from = "NestedSets")]
pub struct MetricSetConfig {
    pub sets: BTreeMap<(SensorSuite, EtchRegion), Vec<MetricKind>>,
}

impl Default for MetricSetConfig {
    fn default() -> Self {
        use EtchRegion::*;
        use MetricKind::*;
        use SensorSuite::*;
        let sets = [
            ((Machine, Al), vec![Avg, Sigma]),
            ((Machine, TiN), vec![AdjR2, Avg, Sigma, Max, Min]),
            ((Machine, Ox), vec![Avg, Sigma]),
            ((Oes, Al), vec![Avg]),
            ((Oes, TiN), vec![AdjR2, Max]),
            ((Oes, Ox), vec![Avg]),
            ((Rfm, Al), vec![Avg, Sigma]),
            ((Rfm, TiN), vec![AdjR2, Ssr, Sigma, Max]),
            ((Rfm, Ox), vec![Avg, Sigma]),
        ];
        MetricSetConfig {
            sets: sets.into_iter().collect(),
        }
    }
}

/// Serialized form: suite → region → metric list.
type NestedSets = BTreeMap<String, BTreeMap<String, Vec<MetricKind>>>;

impl From<MetricSetConfig> for NestedSets {
    fn from(c: MetricSetConfig) -> Self {
        let mut out = NestedSets::new();
        for ((suite, region), kinds) in c.sets {
            out.entry(suite.name().to_string())
                .or_default()
                .insert(region.name().to_string(), kinds);
        }
        out
    }
}

impl TryFrom<NestedSets> for MetricSetConfig {
    type Error = Error;

    fn try_from(nested: NestedSets) -> Result<Self> {
        let mut sets = MetricSetConfig::default().sets;
        for (suite, regions) in nested {
            let suite: SensorSuite = suite.parse()?;
            for (region, kinds) in regions {
                sets.insert((suite, region.parse()?), kinds);
            }
        }
        let c = MetricSetConfig { sets };
        c.validate()?;
        Ok(c)
    }
}

impl MetricSetConfig {
    pub fn get(&self, suite: SensorSuite, region: EtchRegion) -> Result<&[MetricKind]> {
        match self.sets.get(&(suite, region)) {
            Some(kinds) if !kinds.is_empty() => Ok(kinds),
            _ => Err(Error::Config(format!("no metrics configured for {suite} {region}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for suite in SensorSuite::ALL {
            for region in EtchRegion::ALL {
                let kinds = self.get(suite, region)?;
                let mut seen = kinds.to_vec();
                seen.sort();
                seen.dedup();
                if seen.len() != kinds.len() {
                    return Err(Error::Config(format!("duplicate metric in {suite} {region} set")));
                }
            }
        }
        Ok(())
    }
}

/// Column label `<channel>|<region>|<metric>`.
pub fn column_name(channel: &str, region: EtchRegion, metric: MetricKind) -> String {
    format!("{channel}|{region}|{metric}")
}

/// Splits a column label back into its parts.
pub fn parse_column_name(name: &str) -> Option<(&str, EtchRegion, MetricKind)> {
    let mut parts = name.rsplitn(3, '|');
    let metric = parts.next()?.parse().ok()?;
    let region = parts.next()?.parse().ok()?;
    Some((parts.next()?, region, metric))
}

/// One wafer's metrics for one suite and region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub wafer_id: String,
    pub suite: SensorSuite,
    pub region: EtchRegion,
    /// Channel-major, metric-minor in configured order.
    pub entries: Vec<((String, MetricKind), f64)>,
}

impl FeatureVector {
    pub fn from_record(
        record: &WaferRecord,
        suite: SensorSuite,
        region: EtchRegion,
        channels: &[String],
        kinds: &[MetricKind],
    ) -> Result<Self> {
        let mut entries = Vec::with_capacity(channels.len() * kinds.len());
        for ch in channels {
            let trace = record.trace(suite, ch).ok_or_else(|| Error::MissingData {
                wafer: record.wafer_id.clone(),
                channel: ch.clone(),
            })?;
            let m = extract_metrics(trace, region, kinds)?;
            entries.extend(kinds.iter().map(|k| ((ch.clone(), *k), m[k])));
        }
        Ok(FeatureVector {
            wafer_id: record.wafer_id.clone(),
            suite,
            region,
            entries,
        })
    }
}

/// Wafers × features, rows aligned with `wafer_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub suite: SensorSuite,
    pub region: EtchRegion,
    pub wafer_ids: Vec<String>,
    pub columns: Vec<String>,
    pub data: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    /// Rows for the given wafer ids, in that order.
    pub fn select_rows(&self, ids: &[String]) -> Result<FeatureMatrix> {
        let index: BTreeMap<&str, usize> = self
            .wafer_ids
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i))
            .collect();
        let rows = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Dataset(format!("wafer {id} not in feature matrix")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureMatrix {
            suite: self.suite,
            region: self.region,
            wafer_ids: ids.to_vec(),
            columns: self.columns.clone(),
            data: self.data.select_rows(&rows),
        })
    }
}

/// Channel inventory of `suite` taken from the first record, in trace order.
pub fn channel_inventory(records: &[WaferRecord], suite: SensorSuite) -> Vec<String> {
    records
        .first()
        .map(|r| {
            r.traces
                .iter()
                .filter(|t| t.suite == suite)
                .map(|t| t.channel.clone())
                .collect()
        })
        .unwrap_or_default()
}

pub fn build_feature_matrix(
    records: &[WaferRecord],
    suite: SensorSuite,
    region: EtchRegion,
    config: &MetricSetConfig,
) -> Result<FeatureMatrix> {
    let kinds = config.get(suite, region)?;
    let channels = channel_inventory(records, suite);
    if records.is_empty() || channels.is_empty() {
        return Err(Error::InsufficientData(format!("no {suite} traces to build features from")));
    }
    let rows = records
        .par_iter()
        .map(|r| FeatureVector::from_record(r, suite, region, &channels, kinds))
        .collect::<Result<Vec<_>>>()?;

    let columns: Vec<String> = rows[0]
        .entries
        .iter()
        .map(|((ch, k), _)| column_name(ch, region, *k))
        .collect();
    let data = DMatrix::from_fn(rows.len(), columns.len(), |i, j| rows[i].entries[j].1);
    Ok(FeatureMatrix {
        suite,
        region,
        wafer_ids: rows.into_iter().map(|r| r.wafer_id).collect(),
        columns,
        data,
    })
}

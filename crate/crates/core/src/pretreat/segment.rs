use crate::error::{Error, Result};
use crate::model::{RegionWindows, SensorTrace, Window};

/// Endpoint thresholds marking the Al→TiN and TiN→Ox transitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub al_end: f64,
    pub tin_end: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            al_end: 7.0,
            tin_end: 3.0,
        }
    }
}

/// Region windows for one wafer, from annotations when present, otherwise
/// from the first downward crossings of each threshold on the endpoint
/// channel.
pub fn segment_regions(
    traces: &[SensorTrace],
    endpoint_channel: &str,
    thresholds: Thresholds,
) -> Result<RegionWindows> {
    let endpoint = traces
        .iter()
        .find(|t| t.channel == endpoint_channel)
        .ok_or_else(|| Error::MissingData {
            wafer: traces.first().map(|t| t.wafer_id.clone()).unwrap_or_default(),
            channel: endpoint_channel.to_string(),
        })?;
    if let Some(w) = endpoint.region_windows {
        return Ok(w);
    }
    let (times, values) = (&endpoint.times, &endpoint.values);
    if times.len() < 2 {
        return Err(Error::Segmentation(format!(
            "endpoint channel `{endpoint_channel}` has fewer than two samples"
        )));
    }

    let crossing = |from: usize, level: f64| -> Option<usize> {
        (from.max(1)..values.len()).find(|&i| values[i - 1] >= level && values[i] < level)
    };
    let al_end = crossing(0, thresholds.al_end).ok_or_else(|| {
        Error::Segmentation(format!("Al/TiN boundary: endpoint never fell below {}", thresholds.al_end))
    })?;
    let tin_end = crossing(al_end, thresholds.tin_end).ok_or_else(|| {
        Error::Segmentation(format!("TiN/Ox boundary: endpoint never fell below {}", thresholds.tin_end))
    })?;

    let n = times.len();
    let end = times[n - 1] + (times[n - 1] - times[n - 2]);
    Ok(RegionWindows([
        Window { start: times[0], end: times[al_end] },
        Window { start: times[al_end], end: times[tin_end] },
        Window { start: times[tin_end], end },
    ]))
}

/// Stamps `windows` onto every trace.
pub fn apply_windows(traces: &mut [SensorTrace], windows: RegionWindows) {
    for t in traces {
        t.region_windows = Some(windows);
    }
}

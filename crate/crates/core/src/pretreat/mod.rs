//! Raw traces to per-wafer feature matrices: spectral binning, etch-region
//! segmentation, and per-region signal metrics.

mod features;
mod metrics;
mod scaling;
mod segment;
mod spectra;

pub use features::{
    build_feature_matrix, channel_inventory, column_name, parse_column_name, FeatureMatrix,
    FeatureVector, MetricSetConfig,
};
pub use metrics::{extract_metrics, window_metrics, LineFit, MetricKind};
pub use scaling::{standardize, Scaling};
pub use segment::{apply_windows, segment_regions, Thresholds};
pub use spectra::{band_edges, bin_spectra, bin_spectral_series};

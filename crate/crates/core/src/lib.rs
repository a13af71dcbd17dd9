//! Virtual-sensor fault detection and classification for plasma etch.
//!
//! Virtual sensors regress recipe setpoints (and post-etch wafer state) from
//! summary statistics of three independent sensor suites. Disagreement
//! between the suites separates a faulty sensor from a genuine process
//! deviation.

pub mod config;
pub mod doe;
pub mod error;
pub mod fdc;
pub mod gasel;
pub mod model;
pub mod persist;
pub mod pretreat;
pub mod regress;
pub mod sim;
pub mod vsensor;

pub use error::{Error, Result};

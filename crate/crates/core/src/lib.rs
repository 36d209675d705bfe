//! Coverage maps, Cramér-Rao bounds and maximum-likelihood localization for
//! passive UHF RFID tags read by ceiling-tilted patch antennas.
//!
//! The crate is organised bottom-up: [`propagation`] turns a geometry into
//! received power, [`coverage`] decides which antenna pairs hear a tag,
//! [`estimation`] simulates noisy readings and bounds or estimates the tag
//! position, and [`experiments`] sweeps deployments. [`io`] writes results.

pub mod coverage;
pub mod estimation;
pub mod experiments;
pub mod io;
pub mod propagation;
pub mod scenario;

pub use coverage::{coverage_map, coverage_percentage, AntennaPair, CoverageMap, GridSpec, Mode};
pub use estimation::{crlb, crlb_rmse, mle_grid_search, simulate_measurements, FisherInfo, MeasurementSet};
pub use experiments::{build_scenario, calibrate_link_budget, Overrides, SweepAxes};
pub use propagation::{DbScale, Position3D, RadioParams, ReaderAntenna};
pub use scenario::{Placement, Scenario};

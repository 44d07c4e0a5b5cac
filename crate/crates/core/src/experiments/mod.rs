//! Reproducible experiment drivers: the density approximation examples and
//! the robot localization Monte-Carlo study.

pub mod approx;
pub mod config;
pub mod emit;
pub mod localize;
pub mod selftest;

pub use approx::{run_approx_example, ApproxReport, MODE_FLOOR};
pub use config::{FilterKind, GridConfig, LocalizationParams, Scenario, ScenarioConfig};
pub use emit::{emit_approx, emit_localization, Format};
pub use localize::{run_localization, LocalizationReport};

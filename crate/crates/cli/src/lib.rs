//! Scenario runner for the deform-core verification checks.

pub mod builtin;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod series;

pub use report::ReportRow;
pub use runner::{run_scenario, RunOptions};
pub use scenario::{CheckKind, ConfigError, Scenario};
pub use series::{emit_series, SeriesKind};

//! Experiment harness, file formats and CLI plumbing on top of `cldeepc-core`.

pub mod config;
pub mod harness;
pub mod io;
pub mod report;

pub use config::FileConfig;
pub use harness::{run_grid, Axis, CellResult, GridOptions, GridResults};
pub use report::{emit_report, MetricsReport};

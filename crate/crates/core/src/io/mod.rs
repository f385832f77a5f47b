//! Scenario configuration, file formats and batch execution.

mod batch;
mod config;
mod files;
mod table;

pub use batch::{cell_dir, run_scenario};
pub use config::{Normalization, ScenarioConfig, REFERENCE_G_VECTORS};
pub use files::{
    fmt_f64, read_regimen, read_trajectory_csv, write_regimen_csv, write_trajectory_csv, RunRecord,
    TRAJECTORY_COLUMNS,
};
pub use table::{ResultRow, ResultsTable};

//! Configuration, dispatch, persistence and reporting of the experiments.

pub mod checks;
pub mod config;
pub mod output;
pub mod record;
pub mod run;

pub use config::{Kind, ModelSpec, Overrides, Preset, RunConfig};
pub use record::{emit_report, Check, Criterion, RunRecord, Status};
pub use run::{run, run_with};

//! Experiment campaigns: configuration, runner, CSV output and summaries.

pub mod config;
pub mod experiment;
pub mod table;

pub use config::{default_spec, load_config, parse_config, ExperimentKind, ExperimentSpec, Overrides};
pub use experiment::{run_experiment, ResultRow, ResultTable};
pub use table::{read_csv, render_csv, report_summary, write_csv};

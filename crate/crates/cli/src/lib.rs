//! Experiment pipeline behind the `woundsev` binary: configuration,
//! prepare → train → evaluate, results tables and the severity rubric.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod rubric_cmd;

pub use config::{ExperimentConfig, Task};
pub use error::{CliError, Result};
pub use pipeline::{cmd_evaluate, cmd_prepare, cmd_train};
pub use report::{cmd_report, Format, ResultsTable};
pub use rubric_cmd::cmd_rubric;

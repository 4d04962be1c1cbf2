//! Configuration, CSV handling, reports and command dispatch for the `mie`
//! command-line tool.

pub mod config;
pub mod csvio;
pub mod error;
pub mod report;
pub mod rhc;
pub mod run;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use report::{MachineReport, ResultTable};
pub use run::Command;

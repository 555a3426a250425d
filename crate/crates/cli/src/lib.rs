//! File formats and the `bimlta` command-line program.

pub mod app;
pub mod binarize;
pub mod config;
pub mod error;
pub mod io;
pub mod report;

pub use app::{run, Cli};
pub use binarize::{binarize, load_rules, BinarizationRule, Binarized, RuleKind};
pub use config::{Mode, RunConfig};
pub use error::{CliError, Result};
pub use io::{load_covariates, load_incidence, load_table, parse_incidence, save_incidence, RawTable};
pub use report::{emit_fit_report, render_json, FitReport};

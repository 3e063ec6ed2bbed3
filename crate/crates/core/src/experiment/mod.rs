//! Config-driven experiment runner, structured output and the validation suite.

mod config;
mod output;
mod run;
mod validate;

pub use config::{ExperimentConfig, ExperimentKind, InitialCondition};
pub use output::{Output, ReportRow, GIT_HASH, VERSION};
pub use run::{error_exit_code, run_experiment, Assertion, RunOutcome, Status};
pub use validate::{
    criteria, validate, validate_with, Criterion, CriterionResult, Scale, ValidationReport,
};

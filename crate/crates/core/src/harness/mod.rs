//! Experiment runner: configs, seeded runs, CSV/table output and the
//! verification suite.

mod config;
mod report;
mod run;
pub mod verify;

pub use config::{apply_override, DataSource, DatasetConfig, LossConfig, RegConfig, RunConfig};
pub use report::{
    comparison_table, read_records_csv, read_summary_csv, summary_table, write_outputs, write_records_csv,
    write_summary_csv, SummaryRow,
};
pub use run::{
    baseline_config, component_accuracy, kind_name, mean_std, run_experiment, run_experiment_on, run_seed,
    run_with_baseline, sweep_q, train_test, ExperimentResult, RunRecord, SeedRun, Summary,
};
pub use verify::{run_verification_suite, unbiasedness_deviation, CheckResult, VerificationReport, VerifyOptions};

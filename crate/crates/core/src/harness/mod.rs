//! Experiment harness: configs, seeded runs, suites, plots and the property
//! suite behind `pocoopt verify`.

mod config;
mod plot;
mod run;
pub mod suites;
pub mod verify;

pub use config::{BuiltProblem, ExperimentConfig, OptimizerSpec, Overrides, ProblemSpec, RunSpec};
pub use plot::{load_trace, plot, write_merged_csv, LoadedTrace, PlotOutput};
pub use run::{
    execute, run_experiment, run_seed, thread_pool, write_run, write_summary, RunResult, RunSummary, TraceMeta,
    THREADS_ENV,
};
pub use suites::{fig2_report, run_configs, run_suite, suite_configs, Fig2Seed, SuiteResult};

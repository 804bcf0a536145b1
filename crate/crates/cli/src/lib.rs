//! Experiment harness: configuration, model-stack management, the four
//! evaluation conditions, trace logging and plot-data export.

pub mod config;
pub mod experiment;
pub mod plots;
pub mod stack;
pub mod trace;

pub use config::{EvalConfig, ExperimentConfig};
pub use experiment::{
    condition_seeds, run_condition, run_episode, run_suite, Condition, Episode, PolicyVariant,
    ResultRow, ResultsTable, BUILD_VERSION,
};
pub use stack::{ensure_datasets, load_stack, train_stack, OutputPaths, TrainedStack};
pub use trace::TraceRecord;

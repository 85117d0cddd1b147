//! Experiment plumbing: configs, the staged pipeline, on-disk stages and run comparison.

pub mod compare;
pub mod config;
pub mod pipeline;
pub mod stages;

pub use compare::{compare_runs, write_comparison_csv, ComparisonRow};
pub use config::{AnalysisConfig, Axis, CoilKind, Corrections, ExperimentConfig, NavigatorConfig, Scenario, StageOrder};
pub use pipeline::{analyze, correct, process, reconstruct, run_experiment, simulate, Analysis, CorrectedData, ExperimentReport, RawData, RunOutput};

//! Experiment configs, the checkpoint format, caching and outputs.

pub mod checkpoint;
pub mod config;
pub mod emit;
pub mod experiment;
pub mod store;
pub mod summary;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::{
    AnalysisConfig, ArchitectureSpec, Checks, DataSource, ExperimentConfig, ExperimentKind, PlanConfig, PruningConfig, SeedConfig,
    SparsityGrid, SparsityLevel,
};
pub use emit::{curve_csv, fmt_f64, summary_csv, CurveMeta, SummaryRow, Table, CURVE_HEADER, SUMMARY_HEADER};
pub use experiment::{run_experiment, run_experiment_with, toolchain, CheckOutcome, ReportSummary, RunMetrics, RunOptions, RunRecord};
pub use store::{dataset_fingerprint, Store};
pub use summary::{
    median_rewind_summary, select_extreme_sparsity, summarize_replicates, ExtremeSparsity, MedianRewind, RewindObservation, SparsityResult,
};

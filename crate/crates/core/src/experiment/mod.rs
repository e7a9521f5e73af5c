//! Experiment settings, the active-learning loop and its reports.
//!
//! The held-out test split and the initial annotation are derived once from the hidden
//! provenance ([`prepare_split`]); everything after that sees class labels only through an
//! [`Oracle`]. %L is computed from provenance after the fact, for reporting.

mod ablation;
mod config;
mod oracle;
mod report;
mod run;
mod split;

pub use ablation::{
    run_ablation, summarize_sweep, sweep_table, AblationGrid, Arm, SweepCell, SweepRow,
    DEFAULT_PER_CYCLE,
};
pub use config::{ClassifierData, ExperimentConfig, FilterMode, LoopPolicy, Setting};
pub use oracle::{Oracle, QueryBatch, QueryItem, SimulatedOracle};
pub use report::{
    comparison_table, compute_pct_l, read_sweep_csv, summarize, write_comparison_csv,
    write_run_outputs, write_sweep_csv, CycleReport, MeanSd, RunOutcome, RunReport, ScoreTable,
    SettingSummary,
};
pub use run::{
    run_setting, run_with_oracle, train_similarity_for, AdsRun, CycleRecord, PendingCycle, Step,
    RUN_STATE_FILE,
};
pub use split::{prepare_split, InitialAnnotation, Split, TestSet};

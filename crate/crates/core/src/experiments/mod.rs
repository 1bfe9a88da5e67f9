//! Seeded end-to-end runs: the view / object / merge pipeline, the
//! linear-merge weight sweep, and the multi-view and background ablations.
//! Every run is a pure function of its [`ExperimentManifest`] and the base
//! checkpoint.

mod ablation;
mod manifest;
mod pipeline;

pub use ablation::{
    ablate_background, ablate_linear_weights, ablate_multiview, background_trend, best_weight, multiview_trend,
    write_ablation, BackgroundRow, LinearSweepRow, MultiviewRow, TrendFlag,
};
pub use manifest::{ConceptSpec, ExperimentManifest};
pub use pipeline::{
    evaluate_methods, method_deltas, pretrain_base, run_experiment, run_trial, run_trial_with, sample_seed,
    stage, stage_seed, summarize, train_gates, train_object_adapter, train_view_adapter, trial_methods,
    write_csv, write_report, write_trial, ExperimentReport, LeakRow, Method, MethodSummary, ScoreRow,
    TrialOutcome, TrialSetup,
};

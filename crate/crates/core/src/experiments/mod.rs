//! Config-driven experiments: pure and mixed training with rate-vs-SNR
//! evaluation against the MRT oracle, the proportion sweep with the `C(q)`
//! overlay, and result files.

mod config;
mod output;
mod run;

pub use config::{Curvature, ExperimentConfig, NetSection, TheorySection, TrainSection};
pub use output::{emit_results, write_rates_csv, write_sweep_csv, Artifacts};
pub use run::{
    model_label, run_mixed, run_pure, run_sweep, HessianSummary, ModelSummary, RatePoint, RunResult, ScalingResult,
    Session, SweepPoint, SweepResult, TheoryResult, TrainedModel, MIXED_TEST, SCHEMA_VERSION,
};

//! Outer training loop, robustness protocol and run artifacts.

mod config;
mod output;
mod robustness;
mod run;

pub use config::{
    CostWeights, ExperimentConfig, PolicyKind, Sampler, OUT_ENV, SEED_ENV, THRESHOLD_LOOSE,
    THRESHOLD_TIGHT,
};
pub use output::{
    checkpoint_dir, export_learning_curve, export_plot_data, export_trajectories, read_comparison,
    read_diagnostics, read_metrics_csv, read_report, report_path, write_comparison, write_json,
    write_metrics_csv, write_run,
};
pub use robustness::{
    compare_policies, evaluate_robustness, evaluate_trained, uniform_state, Comparison,
    ComparisonSummary, RobustnessReport, ThresholdRow, TrialResult,
};
pub use run::{run_gps, run_gps_with_shadow, CStepDiagnostic, MetricRow, Metrics, RunResult, TrainedPolicy};

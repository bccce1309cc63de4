//! Metrics, seeded experiments, the ablation grid and reports.

mod experiment;
mod metrics;

pub use experiment::{
    ablation_subsets, ablation_suite, assemble_report, evaluate, render_report, render_weights,
    run_experiment, seed_result, train_one, AblationRow, AblationTable, ClassWeights,
    EdgeWeightBlock, EvaluationReport, ExperimentData, ExperimentSpec, MetricsBlock, SeedResult,
    Summary, TrainedRun, WeightSummary,
};
pub use metrics::{confusion, f1_score, metrics, ClassMetrics, ConfusionMatrix, MetricSet, Rate};

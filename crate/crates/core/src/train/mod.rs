//! Optimisation, evaluation, nested cross-validation and the baseline.

pub mod baseline;
pub mod grid;
pub mod metrics;
pub mod nested_cv;
pub mod optim;
pub mod report;
pub mod trainer;

pub use baseline::{knn_baseline, knn_baseline_cv, knn_predict, read_best_hits, score_best_hits, BaselineCvResult};
pub use grid::HyperGrid;
pub use metrics::{average_precision, confusion_matrix, macro_f1, pr_curve, precision_recall_f1};
pub use nested_cv::{
    nested_cv, nested_cv_with_plan, summarize, CvSettings, CvSummary, HeadSummary, NestedCvResult, OuterFoldResult,
    Spread, TrialScore,
};
pub use optim::{adam_step, AdamState};
pub use report::{head_report, one_vs_all_report, ClassMetrics, EvalReport, HeadReport, Provenance};
pub use trainer::{evaluate_samples, predict_probs, train, EpochRecord, History, StopReason, TrainSettings};

//! Cross-validation, hyperparameter search and the benchmark runner.

mod benchmark;
mod folds;
mod metrics;
mod search;

pub use benchmark::{
    fit_variant, median, meta_schema_from_tags, prepare_fold, prepare_folds, run_benchmark,
    trials_csv, BenchmarkConfig, BenchmarkRun, EvalReport, FitResult, FoldData, FoldEntry,
    ModelVariant, TrainedFold, Tuning, VariantSummary, REGION_TAG,
};
pub use folds::{
    expand_training, make_folds, plan_folds, plan_folds_with, BalanceKeys, BalanceReport,
    FoldBalance, FoldPlan, Split, AGE_TOLERANCE, CLASS_TOLERANCE, SEX_TOLERANCE,
    VALIDATION_FRACTION,
};
pub use metrics::{balanced_accuracy, confusion_matrix};
pub use search::{
    hyperparameter_search, run_trials, select_best, trial_configs, FoldSearch, IntRange, LogRange,
    SearchSpace, TrialRecord,
};

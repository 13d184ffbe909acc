//! Experiment harness: holdout splits, model comparison, classifier
//! metrics, rank statistics and label-noise diagnostics.

mod experiments;
mod holdout;
mod metrics;
mod rank;
mod wilcoxon;

pub use experiments::{
    ability_noise_scan, compare_datasets, compare_fits, compare_models, flag_noisy_items,
    Comparison, ComparisonConfig, LossSummary, NoiseScan, ScanRow,
};
pub use holdout::{stratified_holdout, HoldoutPlan, Split};
pub use metrics::{
    auc, classifier_metrics, ClassifierMetrics, MetricsReport, DEFAULT_LOG_LOSS_EPS, METRIC_COLUMNS,
};
pub use rank::{midranks, spearman};
pub use wilcoxon::{wilcoxon_signed_rank, Wilcoxon, EXACT_MAX_N};

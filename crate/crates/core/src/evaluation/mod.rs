//! Episode-based evaluation: ranking metrics, confidence intervals,
//! two-sample comparisons and false-negative analysis.

mod metrics;
mod runner;
mod stats;

pub use metrics::{adjusted_precision_at_k, pr_auc, precision_recall_at_k, ranking, roc_auc};
pub use runner::{
    aggregate, compare, encode_pool, evaluate, false_negative_prevalence, per_category_report, run_episodes, Comparison,
    EpisodeResult, EvalConfig, EvaluationReport, Prevalence,
};
pub use stats::{summarize, welch_t_test, Summary, TTest};

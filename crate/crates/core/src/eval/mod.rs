//! Stratified fold assignment, ranking and threshold metrics, the
//! cross-validation driver, and aggregation into a report.

mod aggregate;
mod cv;
mod folds;
mod metrics;

pub use aggregate::{aggregate, AntibioticSummary, CvReport, ModelSummary, ReportConfig};
pub use cv::{cross_validate, CvOptions, Learner, MetricSet};
pub use folds::{stratified_group_kfold, stratified_kfold, FoldAssignment};
pub use metrics::{binarize, f1, roc_auc, F1Score};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("AUC undefined: labels contain a single class")]
    AucUndefined,
    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
    #[error("label at index {0} is not 0 or 1")]
    BadLabel(usize),
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("k = {k} exceeds the number of rows ({n})")]
    KExceedsRows { k: usize, n: usize },
    #[error("k = {k} exceeds the number of subject groups ({groups})")]
    KExceedsGroups { k: usize, groups: usize },
    #[error("labels contain a single class")]
    SingleClass,
    #[error("class {class} has only {count} member(s); at least 2 required")]
    ClassTooSmall { class: u8, count: usize },
    #[error("fold {fold}: {message}")]
    Fold { fold: usize, message: String },
}

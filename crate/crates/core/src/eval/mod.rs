//! Per-class F1, accuracy, confusion matrices, significance tests and error
//! analysis over predicted class codes.

mod analysis;
mod metrics;
mod report;
mod significance;

pub use analysis::{error_analysis, ClassRecall, ConfusedPair, ErrorAnalysis};
pub use metrics::{accuracy, confusion, f1_per_class, macro_f1, ConfusionMatrix};
pub use report::{render_confusion, render_table, EvalReport, TestSplitId};
pub use significance::{
    bootstrap_test, significance_test, SignificanceResult, TestMode, DEFAULT_ALPHA,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {golds} gold labels but {preds} predictions")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("class code {0} is outside 0..6")]
    CodeOutOfRange(usize),
    #[error("nothing to evaluate")]
    Empty,
    #[error("need at least {needed} samples, got {found}")]
    InsufficientSamples { needed: usize, found: usize },
    #[error("scores contain NaN or infinite values")]
    NonFinite,
    #[error("reports were computed on different test sets: {0} vs {1}")]
    SplitMismatch(String, String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed report: {0}")]
    Json(#[from] serde_json::Error),
}

//! The two from-scratch reference classifiers: softmax regression over
//! TF-IDF features and a CNN-LSTM over term embeddings.

pub mod cnn_lstm;
pub mod logreg;
mod softmax;
pub mod tfidf;

pub use cnn_lstm::{train_cnn_lstm, CnnLstmClassifier, CnnLstmConfig};
pub use logreg::{train_logreg, LogRegClassifier, SoftmaxRegressionModel};
pub use softmax::{argmax, cross_entropy, softmax, softmax_cross_entropy_grad, PROB_FLOOR};
pub use tfidf::{SparseVector, TfidfFeaturizer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textprep::VocabError;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("input contains NaN or infinite values")]
    NonFinite,
    #[error("label {0} is outside 0..6")]
    LabelOutOfRange(usize),
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
    #[error("feature dimension mismatch: model expects {expected}, featurizer gives {found}")]
    FeatureMismatch { expected: usize, found: usize },
    #[error("post `{0}` has no tokens after encoding")]
    EmptyEncoding(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged: loss became {0} at epoch {1}")]
    Diverged(f64, usize),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Shared training knobs for both baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs without dev-accuracy improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    pub optimizer: OptimizerKind,
    /// Inverse of the regularization constant C, as in the common LR default.
    pub l2_strength: f64,
    pub min_frequency: usize,
    pub sublinear_tf: bool,
}

impl Default for BaselineTrainConfig {
    fn default() -> Self {
        BaselineTrainConfig {
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            early_stop_patience: 3,
            optimizer: OptimizerKind::Adam,
            l2_strength: 1.0,
            min_frequency: 2,
            sublinear_tf: false,
        }
    }
}

impl BaselineTrainConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(BaselineError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(BaselineError::InvalidConfig(
                "batch_size must be at least 1".into(),
            ));
        }
        if !(self.l2_strength >= 0.0 && self.l2_strength.is_finite()) {
            return Err(BaselineError::InvalidConfig(
                "l2_strength must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Dev-accuracy bookkeeping for best-epoch selection and early stopping.
#[derive(Debug, Clone)]
pub(crate) struct EarlyStopper {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopper {
    pub(crate) fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: None,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records an epoch; returns true when it is the new best.
    pub(crate) fn observe(&mut self, epoch: usize, dev_accuracy: f64) -> bool {
        if self.best.is_none_or(|b| dev_accuracy > b) {
            self.best = Some(dev_accuracy);
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub(crate) fn should_stop(&self) -> bool {
        self.patience > 0 && self.since_best >= self.patience
    }

    pub(crate) fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

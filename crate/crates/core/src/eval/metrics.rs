use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::NUM_CLASSES;

/// Rows are gold classes, columns predicted classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|c| self.counts[c][c]).sum()
    }

    /// Gold support of class `c`.
    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    /// Number of predictions of class `c`.
    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn precision(&self, c: usize) -> f64 {
        ratio(self.counts[c][c], self.col_sum(c))
    }

    pub fn recall(&self, c: usize) -> f64 {
        ratio(self.counts[c][c], self.row_sum(c))
    }
}

/// `num / den`, with 0/0 taken as 0.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion(golds: &[usize], preds: &[usize]) -> Result<ConfusionMatrix, EvalError> {
    if golds.len() != preds.len() {
        return Err(EvalError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&g, &p) in golds.iter().zip(preds) {
        for code in [g, p] {
            if code >= NUM_CLASSES {
                return Err(EvalError::CodeOutOfRange(code));
            }
        }
        cm.counts[g][p] += 1;
    }
    Ok(cm)
}

/// One-vs-rest F1 per class; any 0/0 along the way counts as 0.
pub fn f1_per_class(cm: &ConfusionMatrix) -> [f64; NUM_CLASSES] {
    let mut out = [0.0; NUM_CLASSES];
    for (c, f) in out.iter_mut().enumerate() {
        let p = cm.precision(c);
        let r = cm.recall(c);
        *f = if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        };
    }
    out
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    match cm.total() {
        0 => Err(EvalError::Empty),
        n => Ok(cm.trace() as f64 / n as f64),
    }
}

/// Mean F1 over the classes that occur in gold.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    let f1 = f1_per_class(cm);
    let present: Vec<f64> = (0..NUM_CLASSES)
        .filter(|&c| cm.row_sum(c) > 0)
        .map(|c| f1[c])
        .collect();
    if present.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

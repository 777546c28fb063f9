//! Per-epoch training log, written next to checkpoints as the dev curve.

use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 0 is the untrained model.
    pub epoch: usize,
    /// Mean training loss over the epoch (NaN for epoch 0).
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch)
    }

    pub fn best_dev_accuracy(&self) -> f64 {
        self.best().map_or(0.0, |r| r.dev_accuracy)
    }

    /// `epoch,train_loss,train_accuracy,dev_accuracy` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_accuracy,dev_accuracy\n");
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.epoch, r.train_loss, r.train_accuracy, r.dev_accuracy
            );
        }
        out
    }
}

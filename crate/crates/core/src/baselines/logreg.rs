//! Multinomial logistic regression trained by mini-batch gradient descent on
//! mean cross-entropy plus an L2 penalty.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::softmax::{argmax, cross_entropy, softmax_unchecked};
use super::tfidf::{SparseVector, TfidfFeaturizer};
use super::{BaselineError, BaselineTrainConfig, EarlyStopper, OptimizerKind};
use crate::corpus::{Corpus, NUM_CLASSES};
use crate::history::{EpochRecord, TrainHistory};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Weights are `[n_features × 6]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxRegressionModel {
    n_features: usize,
    weights: Vec<f64>,
    bias: [f64; NUM_CLASSES],
    l2_strength: f64,
}

/// Gradient of the training objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: [f64; NUM_CLASSES],
}

impl SoftmaxRegressionModel {
    pub fn zeros(n_features: usize, l2_strength: f64) -> Self {
        SoftmaxRegressionModel {
            n_features,
            weights: vec![0.0; n_features * NUM_CLASSES],
            bias: [0.0; NUM_CLASSES],
            l2_strength,
        }
    }

    /// Zero weights with the bias set to smoothed log class priors, so the
    /// untrained model predicts the majority class.
    pub fn with_class_prior(
        n_features: usize,
        l2_strength: f64,
        counts: [usize; NUM_CLASSES],
    ) -> Self {
        let mut m = Self::zeros(n_features, l2_strength);
        let total: usize = counts.iter().sum();
        for (b, &c) in m.bias.iter_mut().zip(&counts) {
            *b = ((c as f64 + 1.0) / (total as f64 + NUM_CLASSES as f64)).ln();
        }
        m
    }

    pub fn from_parts(
        n_features: usize,
        weights: Vec<f64>,
        bias: [f64; NUM_CLASSES],
        l2_strength: f64,
    ) -> Result<Self, BaselineError> {
        if weights.len() != n_features * NUM_CLASSES {
            return Err(BaselineError::FeatureMismatch {
                expected: n_features * NUM_CLASSES,
                found: weights.len(),
            });
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(BaselineError::NonFinite);
        }
        Ok(SoftmaxRegressionModel {
            n_features,
            weights,
            bias,
            l2_strength,
        })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64; NUM_CLASSES] {
        &self.bias
    }

    pub fn l2_strength(&self) -> f64 {
        self.l2_strength
    }

    /// `x W + b`.
    pub fn logits(&self, x: &SparseVector) -> [f64; NUM_CLASSES] {
        let mut z = self.bias;
        for &(j, v) in x {
            let row = &self.weights[j * NUM_CLASSES..(j + 1) * NUM_CLASSES];
            for (zc, w) in z.iter_mut().zip(row) {
                *zc += v * w;
            }
        }
        z
    }

    pub fn predict_proba(&self, x: &SparseVector) -> [f64; NUM_CLASSES] {
        let p = softmax_unchecked(&self.logits(x));
        let mut out = [0.0; NUM_CLASSES];
        out.copy_from_slice(&p);
        out
    }

    fn l2_coef(&self, n_total: usize) -> f64 {
        self.l2_strength / n_total.max(1) as f64
    }

    /// Objective over a batch: mean cross-entropy plus
    /// `l2_strength / (2 n_total) * ||W||^2`, where `n_total` is the training
    /// set size (so the penalty matches a sum-of-losses formulation).
    pub fn objective(&self, xs: &[&SparseVector], ys: &[usize], n_total: usize) -> f64 {
        let ce: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, &y)| cross_entropy(&self.predict_proba(x), y).expect("label in range"))
            .sum::<f64>()
            / xs.len() as f64;
        let sq: f64 = self.weights.iter().map(|w| w * w).sum();
        ce + 0.5 * self.l2_coef(n_total) * sq
    }

    /// Objective value and its gradient over a batch.
    pub fn loss_and_grad(
        &self,
        xs: &[&SparseVector],
        ys: &[usize],
        n_total: usize,
    ) -> (f64, Gradient) {
        let inv_b = 1.0 / xs.len() as f64;
        let coef = self.l2_coef(n_total);
        let mut g = Gradient {
            weights: self.weights.iter().map(|w| coef * w).collect(),
            bias: [0.0; NUM_CLASSES],
        };
        let mut ce = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let p = self.predict_proba(x);
            ce += cross_entropy(&p, y).expect("label in range");
            let mut delta = p;
            delta[y] -= 1.0;
            for (gb, d) in g.bias.iter_mut().zip(&delta) {
                *gb += d * inv_b;
            }
            for &(j, v) in x.iter() {
                let row = &mut g.weights[j * NUM_CLASSES..(j + 1) * NUM_CLASSES];
                for (gw, d) in row.iter_mut().zip(&delta) {
                    *gw += v * d * inv_b;
                }
            }
        }
        let sq: f64 = self.weights.iter().map(|w| w * w).sum();
        (ce * inv_b + 0.5 * coef * sq, g)
    }
}

enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        step: i32,
        m_w: Vec<f64>,
        v_w: Vec<f64>,
        m_b: [f64; NUM_CLASSES],
        v_b: [f64; NUM_CLASSES],
    },
}

impl Optimizer {
    fn new(kind: OptimizerKind, lr: f64, n_weights: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                step: 0,
                m_w: vec![0.0; n_weights],
                v_w: vec![0.0; n_weights],
                m_b: [0.0; NUM_CLASSES],
                v_b: [0.0; NUM_CLASSES],
            },
        }
    }

    fn apply(&mut self, model: &mut SoftmaxRegressionModel, g: &Gradient) {
        match self {
            Optimizer::Sgd { lr } => {
                for (w, d) in model.weights.iter_mut().zip(&g.weights) {
                    *w -= *lr * d;
                }
                for (b, d) in model.bias.iter_mut().zip(&g.bias) {
                    *b -= *lr * d;
                }
            }
            Optimizer::Adam {
                lr,
                step,
                m_w,
                v_w,
                m_b,
                v_b,
            } => {
                *step += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*step);
                let c2 = 1.0 - ADAM_BETA2.powi(*step);
                let update = |p: &mut f64, m: &mut f64, v: &mut f64, d: f64| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * d;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * d * d;
                    *p -= *lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                };
                for i in 0..model.weights.len() {
                    update(
                        &mut model.weights[i],
                        &mut m_w[i],
                        &mut v_w[i],
                        g.weights[i],
                    );
                }
                for i in 0..NUM_CLASSES {
                    update(&mut model.bias[i], &mut m_b[i], &mut v_b[i], g.bias[i]);
                }
            }
        }
    }
}

/// A fitted featurizer plus the regression model on top of it.
#[derive(Debug, Clone)]
pub struct LogRegClassifier {
    featurizer: TfidfFeaturizer,
    model: SoftmaxRegressionModel,
    history: TrainHistory,
}

impl LogRegClassifier {
    pub fn new(
        featurizer: TfidfFeaturizer,
        model: SoftmaxRegressionModel,
        history: TrainHistory,
    ) -> Result<Self, BaselineError> {
        if featurizer.n_features() != model.n_features() {
            return Err(BaselineError::FeatureMismatch {
                expected: model.n_features(),
                found: featurizer.n_features(),
            });
        }
        Ok(LogRegClassifier {
            featurizer,
            model,
            history,
        })
    }

    pub fn featurizer(&self) -> &TfidfFeaturizer {
        &self.featurizer
    }

    pub fn model(&self) -> &SoftmaxRegressionModel {
        &self.model
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn predict_proba(&self, texts: &[&str]) -> Vec<[f64; NUM_CLASSES]> {
        texts
            .iter()
            .map(|t| self.model.predict_proba(&self.featurizer.transform(t)))
            .collect()
    }
}

fn accuracy_on(model: &SoftmaxRegressionModel, xs: &[SparseVector], ys: &[usize]) -> f64 {
    let correct = xs
        .iter()
        .zip(ys)
        .filter(|(x, &y)| argmax(&model.logits(x)) == y)
        .count();
    correct as f64 / xs.len() as f64
}

/// Trains on `train`, selecting the epoch with the best `dev` accuracy.
/// `featurizer` must have been fitted on `train` alone.
pub fn train_logreg(
    train: &Corpus,
    dev: &Corpus,
    featurizer: TfidfFeaturizer,
    config: &BaselineTrainConfig,
) -> Result<LogRegClassifier, BaselineError> {
    config.validate()?;
    if train.is_empty() {
        return Err(BaselineError::EmptyCorpus("training"));
    }
    if dev.is_empty() {
        return Err(BaselineError::EmptyCorpus("dev"));
    }
    let xs: Vec<SparseVector> = train
        .texts()
        .iter()
        .map(|t| featurizer.transform(t))
        .collect();
    let ys: Vec<usize> = train.labels().iter().map(|l| l.code()).collect();
    let dev_xs: Vec<SparseVector> = dev
        .texts()
        .iter()
        .map(|t| featurizer.transform(t))
        .collect();
    let dev_ys: Vec<usize> = dev.labels().iter().map(|l| l.code()).collect();

    let mut model = SoftmaxRegressionModel::with_class_prior(
        featurizer.n_features(),
        config.l2_strength,
        train.class_counts(),
    );
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, model.weights.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut stopper = EarlyStopper::new(config.early_stop_patience);
    let mut history = TrainHistory::default();

    let dev0 = accuracy_on(&model, &dev_xs, &dev_ys);
    stopper.observe(0, dev0);
    history.epochs.push(EpochRecord {
        epoch: 0,
        train_loss: f64::NAN,
        train_accuracy: accuracy_on(&model, &xs, &ys),
        dev_accuracy: dev0,
    });
    let mut best = model.clone();

    let mut order: Vec<usize> = (0..xs.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let bx: Vec<&SparseVector> = chunk.iter().map(|&i| &xs[i]).collect();
            let by: Vec<usize> = chunk.iter().map(|&i| ys[i]).collect();
            let (loss, grad) = model.loss_and_grad(&bx, &by, xs.len());
            if !loss.is_finite() {
                return Err(BaselineError::Diverged(loss, epoch));
            }
            loss_sum += loss;
            batches += 1;
            opt.apply(&mut model, &grad);
        }
        let dev_acc = accuracy_on(&model, &dev_xs, &dev_ys);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            train_accuracy: accuracy_on(&model, &xs, &ys),
            dev_accuracy: dev_acc,
        });
        log::debug!("logreg epoch {epoch}: dev accuracy {dev_acc:.4}");
        if stopper.observe(epoch, dev_acc) {
            best = model.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }
    history.best_epoch = stopper.best_epoch();
    LogRegClassifier::new(featurizer, best, history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CausalCategory, LabeledPost, Split};

    fn labeled(texts: &[(&str, usize)]) -> Corpus {
        Corpus::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, (t, l))| LabeledPost {
                    id: i.to_string(),
                    text: t.to_string(),
                    label: CausalCategory::from_code(*l).unwrap(),
                    split: Split::SdcnlTrain,
                })
                .collect(),
            Split::SdcnlTrain,
        )
    }

    /// 20 posts, two classes, each class owning a disjoint word set.
    fn separable() -> Corpus {
        let a = ["job", "boss", "work", "salary", "career"];
        let b = ["pills", "dose", "meds", "doctor", "therapy"];
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push((format!("{} {}", a[i % 5], a[(i + 2) % 5]), 2));
            rows.push((format!("{} {}", b[i % 5], b[(i + 3) % 5]), 3));
        }
        let refs: Vec<(&str, usize)> = rows.iter().map(|(t, l)| (t.as_str(), *l)).collect();
        labeled(&refs)
    }

    #[test]
    fn separable_fixture_reaches_full_train_accuracy() {
        let train = separable();
        let f = TfidfFeaturizer::fit(&train, 1, false).unwrap();
        let cfg = BaselineTrainConfig {
            epochs: 50,
            learning_rate: 0.05,
            early_stop_patience: 0,
            ..Default::default()
        };
        let clf = train_logreg(&train, &train, f, &cfg).unwrap();
        let probs = clf.predict_proba(&train.texts());
        let correct = probs
            .iter()
            .zip(train.labels())
            .filter(|(p, l)| argmax(&p[..]) == l.code())
            .count();
        assert_eq!(correct, 20);
    }

    #[test]
    fn zero_epochs_predicts_majority() {
        let train = labeled(&[("a b", 0), ("a c", 0), ("a d", 0), ("x y", 4)]);
        let dev = labeled(&[("q", 0), ("r", 0), ("s", 4)]);
        let f = TfidfFeaturizer::fit(&train, 1, false).unwrap();
        let cfg = BaselineTrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let clf = train_logreg(&train, &dev, f, &cfg).unwrap();
        assert_eq!(clf.history().epochs.len(), 1);
        assert!((clf.history().best_dev_accuracy() - 2.0 / 3.0).abs() < 1e-12);
        let p = clf.predict_proba(&["a b c d x y"]);
        assert_eq!(argmax(&p[0]), 0);
    }

    #[test]
    fn rejects_empty_inputs() {
        let train = separable();
        let f = TfidfFeaturizer::fit(&train, 1, false).unwrap();
        let empty = labeled(&[]);
        assert!(matches!(
            train_logreg(&train, &empty, f.clone(), &BaselineTrainConfig::default()),
            Err(BaselineError::EmptyCorpus("dev"))
        ));
        assert!(matches!(
            train_logreg(&empty, &train, f, &BaselineTrainConfig::default()),
            Err(BaselineError::EmptyCorpus("training"))
        ));
    }

    #[test]
    fn feature_dimension_mismatch() {
        let f = TfidfFeaturizer::fit(&separable(), 1, false).unwrap();
        let m = SoftmaxRegressionModel::zeros(f.n_features() + 1, 1.0);
        assert!(matches!(
            LogRegClassifier::new(f, m, TrainHistory::default()),
            Err(BaselineError::FeatureMismatch { .. })
        ));
    }

    #[test]
    fn full_batch_gradient_descent_is_monotone() {
        let train = separable();
        let f = TfidfFeaturizer::fit(&train, 1, false).unwrap();
        let xs: Vec<SparseVector> = train.texts().iter().map(|t| f.transform(t)).collect();
        let refs: Vec<&SparseVector> = xs.iter().collect();
        let ys: Vec<usize> = train.labels().iter().map(|l| l.code()).collect();
        let mut model = SoftmaxRegressionModel::zeros(f.n_features(), 1.0);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, model.weights.len());
        let mut prev = model.objective(&refs, &ys, xs.len());
        for _ in 0..10 {
            let (loss, g) = model.loss_and_grad(&refs, &ys, xs.len());
            assert!((loss - prev).abs() < 1e-12);
            opt.apply(&mut model, &g);
            let next = model.objective(&refs, &ys, xs.len());
            assert!(next <= prev, "{next} > {prev}");
            prev = next;
        }
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let train = separable();
        let f = TfidfFeaturizer::fit(&train, 1, false).unwrap();
        let xs: Vec<SparseVector> = train.texts().iter().map(|t| f.transform(t)).collect();
        let refs: Vec<&SparseVector> = xs.iter().take(6).collect();
        let ys: Vec<usize> = train.labels().iter().take(6).map(|l| l.code()).collect();
        let mut model = SoftmaxRegressionModel::zeros(f.n_features(), 0.7);
        for (i, w) in model.weights.iter_mut().enumerate() {
            *w = ((i * 37 % 11) as f64 - 5.0) * 0.05;
        }
        let (_, g) = model.loss_and_grad(&refs, &ys, 20);
        let h = 1e-6;
        for idx in [0usize, 13, 20, 31, model.weights.len() - 1] {
            let mut plus = model.clone();
            plus.weights[idx] += h;
            let mut minus = model.clone();
            minus.weights[idx] -= h;
            let fd = (plus.objective(&refs, &ys, 20) - minus.objective(&refs, &ys, 20)) / (2.0 * h);
            assert!(
                (fd - g.weights[idx]).abs() < 1e-7,
                "idx {idx}: fd {fd} vs {}",
                g.weights[idx]
            );
        }
    }

    #[test]
    fn seeded_training_is_bit_identical() {
        let train = separable();
        let cfg = BaselineTrainConfig {
            epochs: 5,
            seed: 42,
            batch_size: 3,
            ..Default::default()
        };
        let a = train_logreg(
            &train,
            &train,
            TfidfFeaturizer::fit(&train, 1, false).unwrap(),
            &cfg,
        )
        .unwrap();
        let b = train_logreg(
            &train,
            &train,
            TfidfFeaturizer::fit(&train, 1, false).unwrap(),
            &cfg,
        )
        .unwrap();
        let bits = |m: &SoftmaxRegressionModel| {
            m.weights().iter().map(|w| w.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(bits(a.model()), bits(b.model()));
    }
}

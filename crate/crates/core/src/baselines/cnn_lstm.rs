//! Convolution over term embeddings, max pooling, then a single LSTM layer
//! whose final state feeds a dense softmax layer.
//!
//! Sequences keep their first `max_len` terms and are padded at the front,
//! so the last LSTM step always sees real text.

use candle_core::{Device, Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BaselineError, BaselineTrainConfig, EarlyStopper};
use crate::corpus::{Corpus, NUM_CLASSES};
use crate::history::{EpochRecord, TrainHistory};
use crate::nn::{self, Init, ParamStore};
use crate::textprep::{build_vocab, Vocabulary, PAD_INDEX};

const PREDICT_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnLstmConfig {
    pub max_len: usize,
    pub embedding_dim: usize,
    pub conv_filters: usize,
    pub kernel_size: usize,
    pub pool_size: usize,
    pub lstm_units: usize,
    pub train: BaselineTrainConfig,
}

impl Default for CnnLstmConfig {
    fn default() -> Self {
        CnnLstmConfig {
            max_len: 256,
            embedding_dim: 128,
            conv_filters: 64,
            kernel_size: 5,
            pool_size: 2,
            lstm_units: 64,
            train: BaselineTrainConfig::default(),
        }
    }
}

impl CnnLstmConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        self.train.validate()?;
        let dims = [
            self.max_len,
            self.embedding_dim,
            self.conv_filters,
            self.kernel_size,
            self.pool_size,
            self.lstm_units,
        ];
        if dims.contains(&0) {
            return Err(BaselineError::InvalidConfig(
                "layer sizes must be positive".into(),
            ));
        }
        if self.steps() == 0 {
            return Err(BaselineError::InvalidConfig(format!(
                "max_len {} leaves no LSTM steps after kernel {} and pool {}",
                self.max_len, self.kernel_size, self.pool_size
            )));
        }
        Ok(())
    }

    fn conv_len(&self) -> usize {
        (self.max_len + 1).saturating_sub(self.kernel_size)
    }

    /// LSTM steps after convolution and pooling.
    fn steps(&self) -> usize {
        self.conv_len() / self.pool_size
    }
}

/// Term ids truncated to the first `max_len` and front-padded with
/// [`PAD_INDEX`].
pub fn encode_sequence(vocab: &Vocabulary, raw: &str, max_len: usize) -> Vec<u32> {
    let ids = vocab.encode(raw);
    let kept = &ids[..ids.len().min(max_len)];
    let mut out = vec![PAD_INDEX as u32; max_len - kept.len()];
    out.extend(kept.iter().map(|&i| i as u32));
    out
}

fn param_shapes(cfg: &CnnLstmConfig, vocab_len: usize) -> Vec<(&'static str, Vec<usize>)> {
    let h = cfg.lstm_units;
    vec![
        ("embedding", vec![vocab_len, cfg.embedding_dim]),
        (
            "conv.weight",
            vec![cfg.conv_filters, cfg.embedding_dim, cfg.kernel_size],
        ),
        ("conv.bias", vec![cfg.conv_filters]),
        ("lstm.weight_ih", vec![4 * h, cfg.conv_filters]),
        ("lstm.weight_hh", vec![4 * h, h]),
        ("lstm.bias", vec![4 * h]),
        ("dense.weight", vec![NUM_CLASSES, h]),
        ("dense.bias", vec![NUM_CLASSES]),
    ]
}

fn init_params(
    cfg: &CnnLstmConfig,
    vocab_len: usize,
    seed: u64,
) -> candle_core::Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = Init { rng: &mut rng };
    let h = cfg.lstm_units;
    let mut store = ParamStore::new();
    let mut emb = init.uniform(&[vocab_len, cfg.embedding_dim], 0.05)?;
    // The padding row stays at zero at initialization.
    let pad_row = nn::zeros(&[1, cfg.embedding_dim])?;
    emb = emb.slice_assign(&[PAD_INDEX..PAD_INDEX + 1, 0..cfg.embedding_dim], &pad_row)?;
    store.insert("embedding", emb)?;
    let fan = cfg.embedding_dim * cfg.kernel_size;
    store.insert(
        "conv.weight",
        init.glorot(
            &[cfg.conv_filters, cfg.embedding_dim, cfg.kernel_size],
            fan,
            cfg.conv_filters * cfg.kernel_size,
        )?,
    )?;
    store.insert("conv.bias", nn::zeros(&[cfg.conv_filters])?)?;
    store.insert(
        "lstm.weight_ih",
        init.glorot(&[4 * h, cfg.conv_filters], cfg.conv_filters, 4 * h)?,
    )?;
    let bound = 1.0 / (h as f64).sqrt();
    store.insert("lstm.weight_hh", init.uniform(&[4 * h, h], bound)?)?;
    // Forget-gate bias of one, gates ordered input, forget, cell, output.
    let mut bias = vec![0f32; 4 * h];
    bias[h..2 * h].fill(1.0);
    store.insert("lstm.bias", Tensor::from_vec(bias, 4 * h, &Device::Cpu)?)?;
    store.insert(
        "dense.weight",
        init.glorot(&[NUM_CLASSES, h], h, NUM_CLASSES)?,
    )?;
    store.insert("dense.bias", nn::zeros(&[NUM_CLASSES])?)?;
    Ok(store)
}

fn forward(params: &ParamStore, cfg: &CnnLstmConfig, ids: &Tensor) -> candle_core::Result<Tensor> {
    let (b, _) = ids.dims2()?;
    let h = cfg.lstm_units;
    let x = nn::embed(&params.require("embedding")?, ids)?; // [B, L, E]
    let x = x.transpose(1, 2)?.contiguous()?; // [B, E, L]
    let x = nn::conv1d(&x, &params.require("conv.weight")?)?
        .broadcast_add(
            &params
                .require("conv.bias")?
                .reshape((1, cfg.conv_filters, 1))?,
        )?
        .relu()?; // [B, F, L - k + 1]
    let steps = cfg.steps();
    let x = x.narrow(2, 0, steps * cfg.pool_size)?.reshape((
        b,
        cfg.conv_filters,
        steps,
        cfg.pool_size,
    ))?;
    let x = nn::max_last(&x)?; // [B, F, T]
    let x = x.transpose(1, 2)?.contiguous()?; // [B, T, F]
    let xw = nn::linear(
        &x,
        &params.require("lstm.weight_ih")?,
        Some(&params.require("lstm.bias")?),
    )?;
    let w_hh = params.require("lstm.weight_hh")?;
    let mut hs = Tensor::zeros((b, h), x.dtype(), x.device())?;
    let mut cs = Tensor::zeros((b, h), x.dtype(), x.device())?;
    for t in 0..steps {
        let gates = (xw.narrow(1, t, 1)?.squeeze(1)? + nn::linear(&hs, &w_hh, None)?)?;
        let i = nn::sigmoid(&gates.narrow(1, 0, h)?)?;
        let f = nn::sigmoid(&gates.narrow(1, h, h)?)?;
        let g = gates.narrow(1, 2 * h, h)?.tanh()?;
        let o = nn::sigmoid(&gates.narrow(1, 3 * h, h)?)?;
        cs = ((f * cs)? + (i * g)?)?;
        hs = (o * cs.tanh()?)?;
    }
    nn::linear(
        &hs,
        &params.require("dense.weight")?,
        Some(&params.require("dense.bias")?),
    )
}

fn batch_tensor(seqs: &[&Vec<u32>], max_len: usize) -> candle_core::Result<Tensor> {
    let flat: Vec<u32> = seqs.iter().flat_map(|s| s.iter().copied()).collect();
    Tensor::from_vec(flat, (seqs.len(), max_len), &Device::Cpu)
}

#[derive(Debug, Clone)]
pub struct CnnLstmClassifier {
    config: CnnLstmConfig,
    vocabulary: Vocabulary,
    params: ParamStore,
    history: TrainHistory,
}

impl CnnLstmClassifier {
    /// Reassembles a trained model, checking every parameter shape against
    /// `config` and the vocabulary size.
    pub fn from_parts(
        config: CnnLstmConfig,
        vocabulary: Vocabulary,
        params: ParamStore,
        history: TrainHistory,
    ) -> Result<Self, BaselineError> {
        config.validate()?;
        for (name, dims) in param_shapes(&config, vocabulary.len()) {
            let t = params.require(name)?;
            if t.dims() != dims.as_slice() {
                return Err(BaselineError::FeatureMismatch {
                    expected: dims.iter().product(),
                    found: t.elem_count(),
                });
            }
        }
        Ok(CnnLstmClassifier {
            config,
            vocabulary,
            params,
            history,
        })
    }

    pub fn config(&self) -> &CnnLstmConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn predict_proba(&self, texts: &[&str]) -> Result<Vec<[f64; NUM_CLASSES]>, BaselineError> {
        let seqs: Vec<Vec<u32>> = texts
            .iter()
            .map(|t| encode_sequence(&self.vocabulary, t, self.config.max_len))
            .collect();
        let mut out = Vec::with_capacity(texts.len());
        for chunk in seqs.chunks(PREDICT_BATCH) {
            let refs: Vec<&Vec<u32>> = chunk.iter().collect();
            let logits = forward(
                &self.params,
                &self.config,
                &batch_tensor(&refs, self.config.max_len)?,
            )?;
            out.extend(nn::probabilities::<NUM_CLASSES>(&logits)?);
        }
        Ok(out)
    }
}

fn accuracy(
    params: &ParamStore,
    cfg: &CnnLstmConfig,
    seqs: &[Vec<u32>],
    labels: &[u32],
) -> Result<f64, BaselineError> {
    let mut correct = 0usize;
    for (chunk, gold) in seqs.chunks(PREDICT_BATCH).zip(labels.chunks(PREDICT_BATCH)) {
        let refs: Vec<&Vec<u32>> = chunk.iter().collect();
        let pred = forward(params, cfg, &batch_tensor(&refs, cfg.max_len)?)?
            .argmax(D::Minus1)?
            .to_vec1::<u32>()?;
        correct += pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    }
    Ok(correct as f64 / seqs.len() as f64)
}

/// Builds the term vocabulary from `train`, trains with Adam and keeps the
/// parameters of the best dev epoch.
pub fn train_cnn_lstm(
    train: &Corpus,
    dev: &Corpus,
    config: &CnnLstmConfig,
) -> Result<CnnLstmClassifier, BaselineError> {
    config.validate()?;
    if train.is_empty() {
        return Err(BaselineError::EmptyCorpus("training"));
    }
    if dev.is_empty() {
        return Err(BaselineError::EmptyCorpus("dev"));
    }
    let tc = &config.train;
    let vocabulary = build_vocab(train, tc.min_frequency)?;
    let encode = |c: &Corpus| -> (Vec<Vec<u32>>, Vec<u32>) {
        (
            c.texts()
                .iter()
                .map(|t| encode_sequence(&vocabulary, t, config.max_len))
                .collect(),
            c.labels().iter().map(|l| l.code() as u32).collect(),
        )
    };
    let (xs, ys) = encode(train);
    let (dev_xs, dev_ys) = encode(dev);

    let params = init_params(config, vocabulary.len(), tc.seed)?;
    let mut opt = AdamW::new(
        params.vars(),
        ParamsAdamW {
            lr: tc.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut stopper = EarlyStopper::new(tc.early_stop_patience);
    let mut history = TrainHistory::default();

    let dev0 = accuracy(&params, config, &dev_xs, &dev_ys)?;
    stopper.observe(0, dev0);
    history.epochs.push(EpochRecord {
        epoch: 0,
        train_loss: f64::NAN,
        train_accuracy: accuracy(&params, config, &xs, &ys)?,
        dev_accuracy: dev0,
    });
    let mut best = params.snapshot()?;

    let mut order: Vec<usize> = (0..xs.len()).collect();
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(tc.batch_size) {
            let refs: Vec<&Vec<u32>> = chunk.iter().map(|&i| &xs[i]).collect();
            let targets: Vec<u32> = chunk.iter().map(|&i| ys[i]).collect();
            let targets = Tensor::from_vec(targets, chunk.len(), &Device::Cpu)?;
            let logits = forward(&params, config, &batch_tensor(&refs, config.max_len)?)?;
            let loss = nn::cross_entropy(&logits, &targets)?;
            let value = f64::from(loss.to_scalar::<f32>()?);
            if !value.is_finite() {
                return Err(BaselineError::Diverged(value, epoch));
            }
            opt.backward_step(&loss)?;
            loss_sum += value;
            batches += 1;
        }
        let dev_acc = accuracy(&params, config, &dev_xs, &dev_ys)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            train_accuracy: accuracy(&params, config, &xs, &ys)?,
            dev_accuracy: dev_acc,
        });
        log::debug!("cnn-lstm epoch {epoch}: dev accuracy {dev_acc:.4}");
        if stopper.observe(epoch, dev_acc) {
            best = params.snapshot()?;
        }
        if stopper.should_stop() {
            break;
        }
    }
    params.restore(&best)?;
    history.best_epoch = stopper.best_epoch();
    CnnLstmClassifier::from_parts(config.clone(), vocabulary, params, history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::keyword_corpus;
    use crate::corpus::Split;

    fn tiny() -> CnnLstmConfig {
        CnnLstmConfig {
            max_len: 24,
            embedding_dim: 16,
            conv_filters: 12,
            kernel_size: 3,
            pool_size: 2,
            lstm_units: 12,
            train: BaselineTrainConfig {
                learning_rate: 1e-2,
                epochs: 8,
                batch_size: 8,
                seed: 5,
                early_stop_patience: 0,
                min_frequency: 1,
                ..Default::default()
            },
        }
    }

    #[test]
    fn sequences_keep_head_and_pad_front() {
        let posts = ["my job", "boss left", "the job and boss"]
            .iter()
            .map(|t| crate::corpus::LabeledPost {
                id: String::new(),
                text: t.to_string(),
                label: crate::corpus::CausalCategory::JobsCareers,
                split: Split::SdcnlTrain,
            })
            .collect();
        let vocab = build_vocab(&Corpus::new(posts, Split::SdcnlTrain), 1).unwrap();
        let seq = encode_sequence(&vocab, "job boss", 5);
        assert_eq!(seq[..3], [0, 0, 0]);
        assert_eq!(seq[3], vocab.get("job").unwrap() as u32);
        let long: String = ["job"; 3]
            .iter()
            .chain(["boss"; 10].iter())
            .copied()
            .collect::<Vec<_>>()
            .join(" ");
        let seq = encode_sequence(&vocab, &long, 4);
        let job = vocab.get("job").unwrap() as u32;
        let boss = vocab.get("boss").unwrap() as u32;
        assert_eq!(seq, vec![job, job, job, boss]);
    }

    #[test]
    fn rejects_degenerate_shapes() {
        let cfg = CnnLstmConfig {
            max_len: 3,
            kernel_size: 3,
            pool_size: 2,
            ..tiny()
        };
        assert!(matches!(
            cfg.validate(),
            Err(BaselineError::InvalidConfig(_))
        ));
    }

    #[test]
    fn learns_keyword_corpus() {
        let train = keyword_corpus(96, 1, Split::SdcnlTrain);
        let dev = keyword_corpus(36, 2, Split::SdcnlTrain);
        let clf = train_cnn_lstm(&train, &dev, &tiny()).unwrap();
        assert!(
            clf.history().best_dev_accuracy() > 0.5,
            "dev curve: {}",
            clf.history().to_csv()
        );
        let probs = clf.predict_proba(&dev.texts()).unwrap();
        assert_eq!(probs.len(), dev.len());
        for p in probs {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn seeded_training_repeats() {
        let train = keyword_corpus(24, 3, Split::SdcnlTrain);
        let cfg = CnnLstmConfig {
            train: BaselineTrainConfig {
                epochs: 2,
                ..tiny().train
            },
            ..tiny()
        };
        let a = train_cnn_lstm(&train, &train, &cfg).unwrap();
        let b = train_cnn_lstm(&train, &train, &cfg).unwrap();
        assert_eq!(a.params().digest().unwrap(), b.params().digest().unwrap());
    }

    #[test]
    fn from_parts_checks_shapes() {
        let train = keyword_corpus(12, 0, Split::SdcnlTrain);
        let vocab = build_vocab(&train, 1).unwrap();
        let params = init_params(&tiny(), vocab.len() + 1, 0).unwrap();
        assert!(
            CnnLstmClassifier::from_parts(tiny(), vocab, params, TrainHistory::default()).is_err()
        );
    }
}

#[cfg(test)]
mod gradient_tests {
    use super::*;
    use candle_core::DType;

    fn store_with(
        cfg: &CnnLstmConfig,
        vocab: usize,
        base: &ParamStore,
        name: &str,
        values: Option<&[f64]>,
    ) -> ParamStore {
        let mut q = ParamStore::new();
        for (n, dims) in param_shapes(cfg, vocab) {
            let t = match values {
                Some(v) if n == name => {
                    Tensor::from_vec(v.to_vec(), dims.as_slice(), &Device::Cpu).unwrap()
                }
                _ => base.require(n).unwrap(),
            };
            q.insert(n, t).unwrap();
        }
        q
    }

    #[test]
    fn every_parameter_gradient_matches_finite_differences() {
        let cfg = CnnLstmConfig {
            max_len: 12,
            embedding_dim: 4,
            conv_filters: 3,
            kernel_size: 3,
            pool_size: 2,
            lstm_units: 3,
            ..Default::default()
        };
        let vocab = 10;
        let init = init_params(&cfg, vocab, 1).unwrap();
        // Offset keeps pre-activations away from the relu kink at zero.
        let mut params = ParamStore::new();
        for (n, _) in param_shapes(&cfg, vocab) {
            let t = init.require(n).unwrap().to_dtype(DType::F64).unwrap();
            params.insert(n, (t + 0.037).unwrap()).unwrap();
        }
        let ids = Tensor::from_vec(
            vec![
                0u32, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 0, 0, 0, 0, 0, 0, 9, 3, 3, 2, 1, 4,
            ],
            (2, 12),
            &Device::Cpu,
        )
        .unwrap();
        let targets = Tensor::from_vec(vec![2u32, 4], 2, &Device::Cpu).unwrap();
        let loss_of =
            |p: &ParamStore| nn::cross_entropy(&forward(p, &cfg, &ids).unwrap(), &targets).unwrap();
        let grads = loss_of(&params).backward().unwrap();
        for (name, _) in param_shapes(&cfg, vocab) {
            let t = params.require(name).unwrap();
            let analytic = grads
                .get(&t)
                .unwrap()
                .flatten_all()
                .unwrap()
                .to_vec1::<f64>()
                .unwrap();
            let base = t.flatten_all().unwrap().to_vec1::<f64>().unwrap();
            for k in 0..base.len().min(40) {
                let shifted = |eps: f64| {
                    let mut v = base.clone();
                    v[k] += eps;
                    loss_of(&store_with(&cfg, vocab, &params, name, Some(&v)))
                        .to_scalar::<f64>()
                        .unwrap()
                };
                let numeric = (shifted(1e-5) - shifted(-1e-5)) / 2e-5;
                assert!(
                    (numeric - analytic[k]).abs() < 1e-7,
                    "{name}[{k}]: {numeric} vs {}",
                    analytic[k]
                );
            }
        }
    }
}

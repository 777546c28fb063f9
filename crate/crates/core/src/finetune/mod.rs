//! Fine-tuning of pre-trained sequence encoders with a six-way linear head.
//!
//! Encoders run on candle over the CPU. Checkpoints are directories with
//! `config.json`, `tokenizer.json` and `model.safetensors` in the common hub
//! layout, resolved through a [`CheckpointFetcher`].

mod backend;
mod config;
mod encoder;
pub mod synthetic;

pub use backend::{
    load_backend, BackendRegistry, BackendSpec, CheckpointFetcher, EncoderBackend, LocalFetcher,
    CACHE_ENV, CONFIG_FILE, TOKENIZER_FILE, WEIGHTS_FILE,
};
pub use config::{Architecture, EncoderConfig};

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, NUM_CLASSES};
use crate::history::{EpochRecord, TrainHistory};
use crate::manifest::Manifest;
use crate::nn::{self, Init, ParamStore};
use crate::textprep::{clean, encode_subword, EncodedExample, SubwordError, SubwordTokenizer};
use encoder::Batch;

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";
const PREDICT_BATCH: usize = 16;

#[derive(Debug, Error)]
pub enum FineTuneError {
    #[error("unknown backend `{id}` (known: {known})")]
    UnknownBackend { id: String, known: String },
    #[error("cannot retrieve checkpoint: {0}")]
    Retrieval(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("tokenizer does not match encoder: {0}")]
    TokenizerMismatch(String),
    #[error("invalid fine-tuning config: {0}")]
    InvalidConfig(String),
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
    #[error("sequence {0} has no unmasked position to pool")]
    FullyMasked(usize),
    #[error("encoded example {index} violates the length-{max_len} contract")]
    MalformedExample { index: usize, max_len: usize },
    #[error(
        "loss became {loss} at epoch {epoch}, batch {batch}; lower the learning rate \
         (memory pressure instead calls for a smaller batch size)"
    )]
    Diverged {
        loss: f64,
        epoch: usize,
        batch: usize,
    },
    #[error(transparent)]
    Subword(#[from] SubwordError),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

/// Which position's hidden vector feeds the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingRule {
    FirstToken,
    LastToken,
    Mean,
}

impl PoolingRule {
    /// First position for bidirectional encoders, last real position for the
    /// autoregressive-pretrained one (its summary token sits at the end).
    pub fn default_for(arch: Architecture) -> Self {
        match arch {
            Architecture::Xlnet => PoolingRule::LastToken,
            _ => PoolingRule::FirstToken,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PoolingRule::FirstToken => "first_token",
            PoolingRule::LastToken => "last_token",
            PoolingRule::Mean => "mean",
        }
    }
}

impl fmt::Display for PoolingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PoolingRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            PoolingRule::FirstToken,
            PoolingRule::LastToken,
            PoolingRule::Mean,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| format!("unknown pooling rule `{s}`"))
    }
}

/// Reduces `[B, L, H]` hidden states to `[B, H]` under per-row masks.
pub fn pool(
    hidden: &Tensor,
    masks: &[Vec<u8>],
    rule: PoolingRule,
) -> Result<Tensor, FineTuneError> {
    let (b, l, h) = hidden.dims3()?;
    let mut last = Vec::with_capacity(b);
    for (row, m) in masks.iter().enumerate() {
        match m.iter().take(l).rposition(|&x| x == 1) {
            Some(i) => last.push((row * l + i) as u32),
            None => return Err(FineTuneError::FullyMasked(row)),
        }
    }
    Ok(match rule {
        PoolingRule::FirstToken => hidden.narrow(1, 0, 1)?.squeeze(1)?,
        PoolingRule::LastToken => {
            let idx = Tensor::from_vec(last, b, &Device::Cpu)?;
            hidden.reshape((b * l, h))?.index_select(&idx, 0)?
        }
        PoolingRule::Mean => {
            let m: Vec<f32> = masks
                .iter()
                .flat_map(|r| r[..l].iter().map(|&x| f32::from(x)))
                .collect();
            let m = Tensor::from_vec(m, (b, l, 1), &Device::Cpu)?;
            let count = m.sum(1)?;
            hidden.broadcast_mul(&m)?.sum(1)?.broadcast_div(&count)?
        }
    })
}

/// Adds a freshly initialized `[6, hidden]` head to `store`.
pub fn init_head(store: &mut ParamStore, hidden: usize, seed: u64) -> Result<(), FineTuneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    store.insert(
        HEAD_WEIGHT,
        Init { rng: &mut rng }.normal(&[NUM_CLASSES, hidden], 0.02)?,
    )?;
    store.insert(HEAD_BIAS, nn::zeros(&[NUM_CLASSES])?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneConfig {
    pub max_len: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// `None` uses the backend's default rule.
    pub pooling: Option<PoolingRule>,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            max_len: 256,
            learning_rate: 5e-5,
            batch_size: 16,
            epochs: 4,
            seed: 0,
            pooling: None,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<(), FineTuneError> {
        if self.max_len < 8 {
            return Err(FineTuneError::InvalidConfig(format!(
                "max_len must be >= 8, got {}",
                self.max_len
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FineTuneError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(FineTuneError::InvalidConfig(
                "batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A fine-tuned encoder with its head, tokenizer and training record.
#[derive(Debug, Clone)]
pub struct EncoderClassifier {
    pub backend_id: String,
    pub checkpoint_ref: String,
    pub encoder_config: EncoderConfig,
    pub pooling: PoolingRule,
    pub train_config: FineTuneConfig,
    pub history: TrainHistory,
    tokenizer: SubwordTokenizer,
    params: ParamStore,
}

impl EncoderClassifier {
    /// Reassembles a classifier, checking the head and encoder tensors.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        backend_id: &str,
        checkpoint_ref: &str,
        encoder_config: EncoderConfig,
        tokenizer: SubwordTokenizer,
        params: ParamStore,
        pooling: PoolingRule,
        train_config: FineTuneConfig,
        history: TrainHistory,
    ) -> Result<Self, FineTuneError> {
        let head = params.require(HEAD_WEIGHT)?;
        if head.dims() != [NUM_CLASSES, encoder_config.hidden_size] {
            return Err(FineTuneError::Corrupt(format!(
                "head has shape {:?}",
                head.dims()
            )));
        }
        params.require(HEAD_BIAS)?;
        for (name, dims) in encoder::parameter_shapes(&encoder_config) {
            let t = params.require(&format!("{}{name}", encoder::ENCODER_PREFIX))?;
            if t.dims() != dims.as_slice() {
                return Err(FineTuneError::Corrupt(format!(
                    "tensor `{name}` has shape {:?}",
                    t.dims()
                )));
            }
        }
        Ok(EncoderClassifier {
            backend_id: backend_id.to_string(),
            checkpoint_ref: checkpoint_ref.to_string(),
            encoder_config,
            pooling,
            train_config,
            history,
            tokenizer,
            params,
        })
    }

    pub fn tokenizer(&self) -> &SubwordTokenizer {
        &self.tokenizer
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn encode(&self, text: &str) -> Result<EncodedExample, FineTuneError> {
        Ok(encode_subword(
            &clean(text),
            &self.tokenizer,
            &self.checkpoint_ref,
            self.train_config.max_len,
        )?)
    }

    pub fn predict_proba(&self, texts: &[&str]) -> Result<Vec<[f64; NUM_CLASSES]>, FineTuneError> {
        let examples = texts
            .iter()
            .map(|t| self.encode(t))
            .collect::<Result<Vec<_>, _>>()?;
        let mut out = Vec::with_capacity(texts.len());
        for chunk in examples.chunks(PREDICT_BATCH) {
            let refs: Vec<&EncodedExample> = chunk.iter().collect();
            let logits = logits(&self.params, &self.encoder_config, self.pooling, &refs)?;
            out.extend(nn::probabilities::<NUM_CLASSES>(&logits)?);
        }
        Ok(out)
    }

    /// Run manifest entries for this model.
    pub fn manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        let c = &self.train_config;
        m.set("backend_id", &self.backend_id)
            .set("checkpoint_ref", &self.checkpoint_ref)
            .set("max_len", c.max_len)
            .set("learning_rate", c.learning_rate)
            .set("batch_size", c.batch_size)
            .set("epochs", c.epochs)
            .set("seed", c.seed)
            .set("pooling", self.pooling)
            .set("best_epoch", self.history.best_epoch)
            .set("dev_accuracy", self.history.best_dev_accuracy());
        m
    }
}

fn logits(
    params: &ParamStore,
    cfg: &EncoderConfig,
    pooling: PoolingRule,
    examples: &[&EncodedExample],
) -> Result<Tensor, FineTuneError> {
    let batch = Batch::new(examples, cfg)?;
    let hidden = encoder::forward(params, cfg, &batch)?;
    let pooled = pool(&hidden, &batch.masks, pooling)?;
    Ok(nn::linear(
        &pooled,
        &params.require(HEAD_WEIGHT)?,
        Some(&params.require(HEAD_BIAS)?),
    )?)
}

fn encode_corpus(
    corpus: &Corpus,
    backend: &EncoderBackend,
    max_len: usize,
) -> Result<Vec<EncodedExample>, FineTuneError> {
    let tok = backend.tokenizer();
    corpus
        .posts()
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let e = encode_subword(&clean(&p.text), tok, &backend.checkpoint_ref, max_len)?
                .with_label(p.label);
            if !e.is_well_formed(max_len, tok.pad_id()) {
                return Err(FineTuneError::MalformedExample { index, max_len });
            }
            Ok(e)
        })
        .collect()
}

fn accuracy(
    params: &ParamStore,
    cfg: &EncoderConfig,
    pooling: PoolingRule,
    examples: &[EncodedExample],
) -> Result<f64, FineTuneError> {
    let mut correct = 0usize;
    for chunk in examples.chunks(PREDICT_BATCH) {
        let refs: Vec<&EncodedExample> = chunk.iter().collect();
        let pred = logits(params, cfg, pooling, &refs)?
            .argmax(D::Minus1)?
            .to_vec1::<u32>()?;
        correct += chunk
            .iter()
            .zip(pred)
            .filter(|(e, p)| e.label.map(|l| l.code() as u32) == Some(*p))
            .count();
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Fine-tunes encoder and head together with Adam on mean cross entropy,
/// keeping the parameters of the best dev-accuracy epoch (epoch 0 is the
/// freshly initialized head). Training accuracy in the history is the
/// running accuracy over each epoch's batches.
pub fn fine_tune(
    backend: &EncoderBackend,
    train: &Corpus,
    dev: &Corpus,
    config: &FineTuneConfig,
) -> Result<EncoderClassifier, FineTuneError> {
    config.validate()?;
    if train.is_empty() {
        return Err(FineTuneError::EmptyCorpus("training"));
    }
    if dev.is_empty() {
        return Err(FineTuneError::EmptyCorpus("dev"));
    }
    let pooling = config.pooling.unwrap_or(backend.default_pooling);
    let cfg = &backend.config;
    let train_x = encode_corpus(train, backend, config.max_len)?;
    let dev_x = encode_corpus(dev, backend, config.max_len)?;

    let mut params = backend.param_store()?;
    init_head(&mut params, cfg.hidden_size, config.seed)?;
    let mut opt = AdamW::new(
        params.vars(),
        ParamsAdamW {
            lr: config.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?;

    let mut history = TrainHistory::default();
    let dev0 = accuracy(&params, cfg, pooling, &dev_x)?;
    history.epochs.push(EpochRecord {
        epoch: 0,
        train_loss: f64::NAN,
        train_accuracy: f64::NAN,
        dev_accuracy: dev0,
    });
    let mut best = (0usize, dev0, params.snapshot()?);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        let batches = order.chunks(config.batch_size).count();
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let refs: Vec<&EncodedExample> = chunk.iter().map(|&i| &train_x[i]).collect();
            let gold: Vec<u32> = refs
                .iter()
                .map(|e| e.label.expect("training examples are labeled").code() as u32)
                .collect();
            let out = logits(&params, cfg, pooling, &refs)?;
            let targets = Tensor::from_vec(gold.clone(), gold.len(), &Device::Cpu)?;
            let loss = nn::cross_entropy(&out, &targets)?;
            let value = f64::from(loss.to_dtype(DType::F32)?.to_scalar::<f32>()?);
            if !value.is_finite() {
                return Err(FineTuneError::Diverged {
                    loss: value,
                    epoch,
                    batch: bi,
                });
            }
            opt.backward_step(&loss)?;
            loss_sum += value;
            let pred = out.argmax(D::Minus1)?.to_vec1::<u32>()?;
            correct += pred.iter().zip(&gold).filter(|(p, g)| p == g).count();
        }
        let dev_acc = accuracy(&params, cfg, pooling, &dev_x)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            train_accuracy: correct as f64 / train_x.len() as f64,
            dev_accuracy: dev_acc,
        });
        log::debug!(
            "{} epoch {epoch}: dev accuracy {dev_acc:.4}",
            backend.backend_id
        );
        if dev_acc > best.1 {
            best = (epoch, dev_acc, params.snapshot()?);
        }
    }
    params.restore(&best.2)?;
    history.best_epoch = best.0;
    EncoderClassifier::from_parts(
        &backend.backend_id,
        &backend.checkpoint_ref,
        cfg.clone(),
        backend.tokenizer().clone(),
        params,
        pooling,
        config.clone(),
        history,
    )
}

//! A trained model of any kind behind one prediction interface, persisted as
//! a checkpoint directory:
//!
//! - `manifest.txt`: run manifest plus `model_kind` and file digests
//! - `weights.safetensors`
//! - `dev_curve.csv`: per-epoch training log
//! - `vocab.txt` (baselines) or `tokenizer.json` and `config.json` (encoders)
//! - `cnn_lstm.json` or `finetune.json`: architecture and training settings

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::{
    argmax, BaselineError, CnnLstmClassifier, CnnLstmConfig, LogRegClassifier,
    SoftmaxRegressionModel, TfidfFeaturizer,
};
use crate::corpus::{CausalCategory, NUM_CLASSES};
use crate::finetune::{
    EncoderClassifier, EncoderConfig, FineTuneConfig, FineTuneError, PoolingRule,
};
use crate::history::{EpochRecord, TrainHistory};
use crate::manifest::{Manifest, ManifestError, MANIFEST_FILE};
use crate::nn::ParamStore;
use crate::textprep::{SubwordTokenizer, VocabError, Vocabulary};

pub const WEIGHTS: &str = "weights.safetensors";
pub const VOCAB: &str = "vocab.txt";
pub const DEV_CURVE: &str = "dev_curve.csv";
pub const TOKENIZER: &str = "tokenizer.json";
pub const ENCODER_CONFIG: &str = "config.json";
pub const CNN_LSTM_CONFIG: &str = "cnn_lstm.json";
pub const FINETUNE_CONFIG: &str = "finetune.json";

pub const LOGREG: &str = "logreg";
pub const CNN_LSTM: &str = "cnn_lstm";

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint file {file} does not match the manifest: expected digest {expected}, found {found}")]
    DigestMismatch {
        file: String,
        expected: String,
        found: String,
    },
    #[error("vocabulary hash mismatch: manifest records {expected}, checkpoint vocabulary hashes to {found}")]
    VocabMismatch { expected: String, found: String },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("nothing to predict")]
    EmptyInput,
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    FineTune(#[from] FineTuneError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

/// Predicted class and the full distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: CausalCategory,
    pub probs: [f64; NUM_CLASSES],
}

impl Prediction {
    /// Ties go to the lowest class code.
    pub fn from_probs(probs: [f64; NUM_CLASSES]) -> Self {
        Prediction {
            class: CausalCategory::from_code(argmax(&probs)).expect("argmax is in range"),
            probs,
        }
    }
}

#[derive(Debug, Clone)]
pub enum TrainedClassifier {
    LogReg(LogRegClassifier),
    CnnLstm(CnnLstmClassifier),
    Encoder(EncoderClassifier),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ClassifierError + '_ {
    move |source| ClassifierError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn sha256_file(path: &Path) -> Result<String, ClassifierError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ClassifierError> {
    let text = serde_json::to_string_pretty(value).expect("config types serialize");
    std::fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ClassifierError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text)
        .map_err(|e| ClassifierError::Malformed(format!("{}: {e}", path.display())))
}

fn parse_history(text: &str, best_epoch: usize) -> Result<TrainHistory, ClassifierError> {
    let mut epochs = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || ClassifierError::Malformed(format!("dev curve line `{line}`"));
        if f.len() != 4 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        epochs.push(EpochRecord {
            epoch: f[0].parse().map_err(|_| bad())?,
            train_loss: num(f[1])?,
            train_accuracy: num(f[2])?,
            dev_accuracy: num(f[3])?,
        });
    }
    Ok(TrainHistory { epochs, best_epoch })
}

impl TrainedClassifier {
    /// `logreg`, `cnn_lstm`, or the encoder backend id.
    pub fn kind(&self) -> &str {
        match self {
            TrainedClassifier::LogReg(_) => LOGREG,
            TrainedClassifier::CnnLstm(_) => CNN_LSTM,
            TrainedClassifier::Encoder(e) => &e.backend_id,
        }
    }

    pub fn history(&self) -> &TrainHistory {
        match self {
            TrainedClassifier::LogReg(m) => m.history(),
            TrainedClassifier::CnnLstm(m) => m.history(),
            TrainedClassifier::Encoder(m) => &m.history,
        }
    }

    /// One prediction per text, in input order.
    pub fn predict(&self, texts: &[&str]) -> Result<Vec<Prediction>, ClassifierError> {
        if texts.is_empty() {
            return Err(ClassifierError::EmptyInput);
        }
        let probs = match self {
            TrainedClassifier::LogReg(m) => m.predict_proba(texts),
            TrainedClassifier::CnnLstm(m) => m.predict_proba(texts)?,
            TrainedClassifier::Encoder(m) => m.predict_proba(texts)?,
        };
        Ok(probs.into_iter().map(Prediction::from_probs).collect())
    }

    /// Hex SHA-256 of the model weights in memory.
    pub fn weights_digest(&self) -> Result<String, ClassifierError> {
        Ok(match self {
            TrainedClassifier::LogReg(m) => {
                let mut h = Sha256::new();
                for v in m.model().weights().iter().chain(m.model().bias()) {
                    h.update(v.to_le_bytes());
                }
                hex::encode(h.finalize())
            }
            TrainedClassifier::CnnLstm(m) => m.params().digest()?,
            TrainedClassifier::Encoder(m) => m.params().digest()?,
        })
    }

    /// Writes the checkpoint directory. `manifest` is extended with the model
    /// kind and file digests before it is written.
    pub fn save(&self, dir: &Path, manifest: &Manifest) -> Result<Manifest, ClassifierError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut m = manifest.clone();
        m.set("model_kind", self.kind());
        let weights = dir.join(WEIGHTS);
        match self {
            TrainedClassifier::LogReg(c) => {
                let f = c.featurizer();
                let model = c.model();
                let nf = model.n_features();
                let dev = &Device::Cpu;
                let tensors: HashMap<String, Tensor> = [
                    (
                        "weights",
                        Tensor::from_slice(model.weights(), (nf, NUM_CLASSES), dev)?,
                    ),
                    ("bias", Tensor::from_slice(model.bias(), NUM_CLASSES, dev)?),
                    ("idf", Tensor::from_slice(f.idf(), nf, dev)?),
                ]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
                candle_core::safetensors::save(&tensors, &weights)?;
                f.vocabulary().save(&dir.join(VOCAB))?;
                m.set("l2_strength", model.l2_strength())
                    .set("sublinear_tf", f.sublinear_tf())
                    .set("min_frequency", f.vocabulary().min_frequency())
                    .set("vocab_sha256", f.vocabulary().hash());
            }
            TrainedClassifier::CnnLstm(c) => {
                c.params().save(&weights)?;
                c.vocabulary().save(&dir.join(VOCAB))?;
                write_json(&dir.join(CNN_LSTM_CONFIG), c.config())?;
                m.set("min_frequency", c.vocabulary().min_frequency())
                    .set("vocab_sha256", c.vocabulary().hash());
            }
            TrainedClassifier::Encoder(c) => {
                c.params().save(&weights)?;
                let tok_path = dir.join(TOKENIZER);
                c.tokenizer()
                    .inner()
                    .save(&tok_path, true)
                    .map_err(|e| ClassifierError::Malformed(format!("saving tokenizer: {e}")))?;
                let cfg_path = dir.join(ENCODER_CONFIG);
                std::fs::write(&cfg_path, c.encoder_config.to_json()).map_err(io_err(&cfg_path))?;
                write_json(&dir.join(FINETUNE_CONFIG), &c.train_config)?;
                for (k, v) in c.manifest().entries() {
                    if m.get(k).is_none() {
                        m.set(k, v);
                    }
                }
                m.set("pooling", c.pooling)
                    .set("tokenizer_sha256", sha256_file(&tok_path)?);
            }
        }
        let curve = dir.join(DEV_CURVE);
        std::fs::write(&curve, self.history().to_csv()).map_err(io_err(&curve))?;
        m.set("best_epoch", self.history().best_epoch)
            .set("dev_accuracy", self.history().best_dev_accuracy())
            .set("weights_sha256", sha256_file(&weights)?);
        m.save(&dir.join(MANIFEST_FILE))?;
        Ok(m)
    }

    /// Loads a checkpoint directory, verifying recorded digests.
    pub fn load(dir: &Path) -> Result<(TrainedClassifier, Manifest), ClassifierError> {
        let m = Manifest::load(&dir.join(MANIFEST_FILE))?;
        let weights = dir.join(WEIGHTS);
        let check = |file: &Path, key: &str| -> Result<(), ClassifierError> {
            let found = sha256_file(file)?;
            let expected = m.require(key)?;
            if found != expected {
                return Err(ClassifierError::DigestMismatch {
                    file: file.display().to_string(),
                    expected: expected.to_string(),
                    found,
                });
            }
            Ok(())
        };
        check(&weights, "weights_sha256")?;
        let load_vocab = || -> Result<Vocabulary, ClassifierError> {
            let v = Vocabulary::load(&dir.join(VOCAB), m.parse_value("min_frequency")?)?;
            let expected = m.require("vocab_sha256")?;
            if v.hash() != expected {
                return Err(ClassifierError::VocabMismatch {
                    expected: expected.to_string(),
                    found: v.hash(),
                });
            }
            Ok(v)
        };
        let curve = dir.join(DEV_CURVE);
        let history = parse_history(
            &std::fs::read_to_string(&curve).map_err(io_err(&curve))?,
            m.parse_value("best_epoch")?,
        )?;
        let kind = m.require("model_kind")?;
        let clf = match kind {
            LOGREG => {
                let vocab = load_vocab()?;
                let t = candle_core::safetensors::load(&weights, &Device::Cpu)?;
                let get = |k: &str| -> Result<Vec<f64>, ClassifierError> {
                    let t = t.get(k).ok_or_else(|| {
                        ClassifierError::Malformed(format!("missing tensor `{k}`"))
                    })?;
                    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
                };
                let bias_v = get("bias")?;
                let bias: [f64; NUM_CLASSES] = bias_v
                    .try_into()
                    .map_err(|_| ClassifierError::Malformed("bias must have 6 entries".into()))?;
                let featurizer = TfidfFeaturizer::from_parts(
                    vocab,
                    get("idf")?,
                    m.parse_value("sublinear_tf")?,
                )?;
                let model = SoftmaxRegressionModel::from_parts(
                    featurizer.n_features(),
                    get("weights")?,
                    bias,
                    m.parse_value("l2_strength")?,
                )?;
                TrainedClassifier::LogReg(LogRegClassifier::new(featurizer, model, history)?)
            }
            CNN_LSTM => {
                let vocab = load_vocab()?;
                let config: CnnLstmConfig = read_json(&dir.join(CNN_LSTM_CONFIG))?;
                TrainedClassifier::CnnLstm(CnnLstmClassifier::from_parts(
                    config,
                    vocab,
                    ParamStore::load(&weights)?,
                    history,
                )?)
            }
            backend_id => {
                let tok_path = dir.join(TOKENIZER);
                check(&tok_path, "tokenizer_sha256")?;
                let checkpoint_ref = m.require("checkpoint_ref")?;
                let encoder_config = EncoderConfig::load(&dir.join(ENCODER_CONFIG))?;
                let tokenizer = SubwordTokenizer::from_file(
                    &tok_path,
                    checkpoint_ref,
                    Some(encoder_config.pad_token_id),
                )
                .map_err(FineTuneError::from)?;
                let train_config: FineTuneConfig = read_json(&dir.join(FINETUNE_CONFIG))?;
                let pooling: PoolingRule = m
                    .require("pooling")?
                    .parse()
                    .map_err(ClassifierError::Malformed)?;
                TrainedClassifier::Encoder(EncoderClassifier::from_parts(
                    backend_id,
                    checkpoint_ref,
                    encoder_config,
                    tokenizer,
                    ParamStore::load(&weights)?,
                    pooling,
                    train_config,
                    history,
                )?)
            }
        };
        Ok((clf, m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{train_cnn_lstm, train_logreg, BaselineTrainConfig};
    use crate::corpus::synthetic::keyword_corpus;
    use crate::corpus::Split;
    use crate::finetune::synthetic::{write_synthetic_checkpoint, TinySpec};
    use crate::finetune::{fine_tune, load_backend, Architecture, BackendRegistry, LocalFetcher};

    fn texts() -> Vec<&'static str> {
        vec![
            "my boss fired me",
            "pills make me sleepy",
            "so lonely and isolated",
            "x",
        ]
    }

    fn assert_same_predictions(a: &TrainedClassifier, b: &TrainedClassifier) {
        let pa = a.predict(&texts()).unwrap();
        let pb = b.predict(&texts()).unwrap();
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(x.class, y.class);
            for c in 0..NUM_CLASSES {
                assert!((x.probs[c] - y.probs[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn logreg_round_trip_and_vocab_guard() {
        let train = keyword_corpus(60, 1, Split::SdcnlTrain);
        let f = TfidfFeaturizer::fit(&train, 1, false).unwrap();
        let clf = TrainedClassifier::LogReg(
            train_logreg(&train, &train, f, &BaselineTrainConfig::default()).unwrap(),
        );
        let dir = tempfile::tempdir().unwrap();
        let m = clf.save(dir.path(), &Manifest::new()).unwrap();
        assert_eq!(m.get("model_kind"), Some(LOGREG));
        let (back, _) = TrainedClassifier::load(dir.path()).unwrap();
        assert_same_predictions(&clf, &back);

        // Tampering with the vocabulary trips the hash guard.
        let vocab = dir.path().join(VOCAB);
        let text = std::fs::read_to_string(&vocab).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let (a, b) = (lines[2].clone(), lines[3].clone());
        let (ta, ia) = a.rsplit_once('\t').unwrap();
        let (tb, ib) = b.rsplit_once('\t').unwrap();
        lines[2] = format!("{tb}\t{ia}");
        lines[3] = format!("{ta}\t{ib}");
        std::fs::write(&vocab, lines.join("\n") + "\n").unwrap();
        assert!(matches!(
            TrainedClassifier::load(dir.path()),
            Err(ClassifierError::VocabMismatch { .. })
        ));
    }

    #[test]
    fn cnn_lstm_round_trip() {
        let train = keyword_corpus(24, 2, Split::SdcnlTrain);
        let cfg = CnnLstmConfig {
            max_len: 16,
            embedding_dim: 8,
            conv_filters: 4,
            kernel_size: 3,
            lstm_units: 4,
            train: BaselineTrainConfig {
                epochs: 1,
                min_frequency: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let clf = TrainedClassifier::CnnLstm(train_cnn_lstm(&train, &train, &cfg).unwrap());
        let dir = tempfile::tempdir().unwrap();
        clf.save(dir.path(), &Manifest::new()).unwrap();
        let (back, _) = TrainedClassifier::load(dir.path()).unwrap();
        assert_same_predictions(&clf, &back);
        assert_eq!(back.history().best_epoch, clf.history().best_epoch);
        assert_eq!(back.history().to_csv(), clf.history().to_csv());
    }

    #[test]
    fn encoder_round_trip_and_weight_guard() {
        let train = keyword_corpus(12, 3, Split::SdcnlTrain);
        let ckpt = tempfile::tempdir().unwrap();
        let spec = TinySpec {
            hidden_size: 8,
            num_layers: 1,
            num_heads: 2,
            intermediate_size: 16,
            max_positions: 64,
        };
        write_synthetic_checkpoint(ckpt.path(), Architecture::Xlnet, &train, spec, 0).unwrap();
        let backend = load_backend(
            &BackendRegistry::default(),
            &LocalFetcher::default(),
            "xlnet",
            Some(ckpt.path().to_str().unwrap()),
        )
        .unwrap();
        let cfg = FineTuneConfig {
            max_len: 32,
            epochs: 1,
            ..Default::default()
        };
        let clf = TrainedClassifier::Encoder(fine_tune(&backend, &train, &train, &cfg).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let m = clf.save(dir.path(), &Manifest::new()).unwrap();
        assert_eq!(m.get("backend_id"), Some("xlnet"));
        let (back, _) = TrainedClassifier::load(dir.path()).unwrap();
        assert_same_predictions(&clf, &back);

        std::fs::write(dir.path().join(WEIGHTS), b"garbage").unwrap();
        assert!(matches!(
            TrainedClassifier::load(dir.path()),
            Err(ClassifierError::DigestMismatch { .. })
        ));
    }

    #[test]
    fn empty_input_and_ties() {
        let p = Prediction::from_probs([0.3, 0.3, 0.1, 0.1, 0.1, 0.1]);
        assert_eq!(p.class, CausalCategory::NoReason);
        let train = keyword_corpus(12, 1, Split::SdcnlTrain);
        let f = TfidfFeaturizer::fit(&train, 1, false).unwrap();
        let clf = TrainedClassifier::LogReg(
            train_logreg(&train, &train, f, &BaselineTrainConfig::default()).unwrap(),
        );
        assert!(matches!(clf.predict(&[]), Err(ClassifierError::EmptyInput)));
    }
}

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};

use super::config::{Architecture, EncoderConfig};
use super::encoder::{self, Batch, ENCODER_PREFIX};
use super::{FineTuneError, PoolingRule};
use crate::nn::ParamStore;
use crate::textprep::{EncodedExample, SubwordTokenizer};

pub const CACHE_ENV: &str = "CAUSALCAT_CACHE";
pub const CONFIG_FILE: &str = "config.json";
pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const WEIGHTS_FILE: &str = "model.safetensors";

/// One slot of the backend registry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendSpec {
    pub id: String,
    pub architecture: Architecture,
    /// Used when a run names no checkpoint.
    pub default_checkpoint: String,
    pub default_pooling: PoolingRule,
}

#[derive(Debug, Clone)]
pub struct BackendRegistry {
    specs: BTreeMap<String, BackendSpec>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut r = BackendRegistry {
            specs: BTreeMap::new(),
        };
        for (id, arch, ckpt) in [
            (
                "distilbert",
                Architecture::DistilBert,
                "distilbert-base-uncased",
            ),
            (
                "bert_emotion",
                Architecture::Bert,
                "bhadresh-savani/bert-base-uncased-emotion",
            ),
            ("roberta", Architecture::Roberta, "roberta-base"),
            ("xlnet", Architecture::Xlnet, "xlnet-base-cased"),
        ] {
            r.register(BackendSpec {
                id: id.into(),
                architecture: arch,
                default_checkpoint: ckpt.into(),
                default_pooling: PoolingRule::default_for(arch),
            });
        }
        r
    }
}

impl BackendRegistry {
    /// Adds or replaces a slot.
    pub fn register(&mut self, spec: BackendSpec) {
        self.specs.insert(spec.id.clone(), spec);
    }

    pub fn get(&self, id: &str) -> Result<&BackendSpec, FineTuneError> {
        self.specs
            .get(id)
            .ok_or_else(|| FineTuneError::UnknownBackend {
                id: id.to_string(),
                known: self.ids().join(", "),
            })
    }

    pub fn ids(&self) -> Vec<&str> {
        self.specs.keys().map(String::as_str).collect()
    }
}

/// Resolves a checkpoint reference to a local directory holding
/// `config.json`, `tokenizer.json` and `model.safetensors`.
pub trait CheckpointFetcher {
    fn fetch(&self, checkpoint_ref: &str) -> Result<PathBuf, FineTuneError>;
}

/// Offline resolution: an existing directory path, or a directory under the
/// cache root named after the reference with `/` replaced by `--`.
#[derive(Debug, Clone, Default)]
pub struct LocalFetcher {
    pub cache_dir: Option<PathBuf>,
}

impl LocalFetcher {
    /// Cache root from [`CACHE_ENV`], if set.
    pub fn from_env() -> Self {
        LocalFetcher {
            cache_dir: std::env::var_os(CACHE_ENV).map(PathBuf::from),
        }
    }

    pub fn cache_key(checkpoint_ref: &str) -> String {
        checkpoint_ref.replace('/', "--")
    }
}

impl CheckpointFetcher for LocalFetcher {
    fn fetch(&self, checkpoint_ref: &str) -> Result<PathBuf, FineTuneError> {
        let direct = Path::new(checkpoint_ref);
        if direct.is_dir() {
            return Ok(direct.to_path_buf());
        }
        if let Some(root) = &self.cache_dir {
            let cached = root.join(Self::cache_key(checkpoint_ref));
            if cached.is_dir() {
                return Ok(cached);
            }
        }
        Err(FineTuneError::Retrieval(format!(
            "checkpoint `{checkpoint_ref}` is neither a directory nor present in the cache ({}); \
             download it there first",
            self.cache_dir
                .as_ref()
                .map_or_else(|| format!("{CACHE_ENV} unset"), |d| d.display().to_string())
        )))
    }
}

/// A loaded pre-trained encoder and its paired tokenizer. Read-only:
/// fine-tuning copies the weights.
#[derive(Debug, Clone)]
pub struct EncoderBackend {
    pub backend_id: String,
    pub checkpoint_ref: String,
    pub config: EncoderConfig,
    pub default_pooling: PoolingRule,
    tokenizer: SubwordTokenizer,
    weights: HashMap<String, Tensor>,
}

impl EncoderBackend {
    /// Assembles a backend, checking that tokenizer and weights fit `config`.
    pub fn new(
        backend_id: &str,
        checkpoint_ref: &str,
        config: EncoderConfig,
        tokenizer: SubwordTokenizer,
        raw_weights: HashMap<String, Tensor>,
        default_pooling: PoolingRule,
    ) -> Result<Self, FineTuneError> {
        if tokenizer.checkpoint() != checkpoint_ref {
            return Err(FineTuneError::TokenizerMismatch(format!(
                "tokenizer is tagged `{}`, encoder is `{checkpoint_ref}`",
                tokenizer.checkpoint()
            )));
        }
        if tokenizer.vocab_size() > config.vocab_size {
            return Err(FineTuneError::TokenizerMismatch(format!(
                "tokenizer has {} entries but the encoder embeds only {}",
                tokenizer.vocab_size(),
                config.vocab_size
            )));
        }
        if tokenizer.pad_id() != config.pad_token_id {
            return Err(FineTuneError::TokenizerMismatch(format!(
                "tokenizer pads with id {} but the encoder expects {}",
                tokenizer.pad_id(),
                config.pad_token_id
            )));
        }
        let weights = encoder::normalize_weights(&config, raw_weights)?;
        Ok(EncoderBackend {
            backend_id: backend_id.to_string(),
            checkpoint_ref: checkpoint_ref.to_string(),
            config,
            default_pooling,
            tokenizer,
            weights,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    pub fn tokenizer(&self) -> &SubwordTokenizer {
        &self.tokenizer
    }

    /// Trainable copy of the encoder weights, named `encoder.*`.
    pub fn param_store(&self) -> Result<ParamStore, FineTuneError> {
        let mut store = ParamStore::new();
        let mut names: Vec<&String> = self.weights.keys().collect();
        names.sort();
        for name in names {
            store.insert(
                &format!("{ENCODER_PREFIX}{name}"),
                self.weights[name].copy()?,
            )?;
        }
        Ok(store)
    }

    /// Last hidden states `[B, L', H]`, where `L'` is the longest real length
    /// in the batch.
    pub fn hidden_states(&self, examples: &[EncodedExample]) -> Result<Tensor, FineTuneError> {
        let refs: Vec<&EncodedExample> = examples.iter().collect();
        let batch = Batch::new(&refs, &self.config)?;
        Ok(encoder::forward(
            &self.param_store()?,
            &self.config,
            &batch,
        )?)
    }
}

/// Loads a backend through `fetcher`; `checkpoint_ref` of `None` uses the
/// registry default for `backend_id`.
pub fn load_backend(
    registry: &BackendRegistry,
    fetcher: &dyn CheckpointFetcher,
    backend_id: &str,
    checkpoint_ref: Option<&str>,
) -> Result<EncoderBackend, FineTuneError> {
    let spec = registry.get(backend_id)?;
    let checkpoint_ref = checkpoint_ref.unwrap_or(&spec.default_checkpoint);
    let dir = fetcher.fetch(checkpoint_ref)?;
    for file in [CONFIG_FILE, TOKENIZER_FILE, WEIGHTS_FILE] {
        if !dir.join(file).is_file() {
            return Err(FineTuneError::Retrieval(format!(
                "{} has no {file}",
                dir.display()
            )));
        }
    }
    let config = EncoderConfig::load(&dir.join(CONFIG_FILE))?;
    if config.architecture != spec.architecture {
        return Err(FineTuneError::Corrupt(format!(
            "backend `{backend_id}` expects a {} checkpoint, found {}",
            spec.architecture.model_type(),
            config.architecture.model_type()
        )));
    }
    let tokenizer = SubwordTokenizer::from_file(
        &dir.join(TOKENIZER_FILE),
        checkpoint_ref,
        Some(config.pad_token_id),
    )?;
    let raw =
        candle_core::safetensors::load(dir.join(WEIGHTS_FILE), &Device::Cpu).map_err(|e| {
            FineTuneError::Corrupt(format!("{}: {e}", dir.join(WEIGHTS_FILE).display()))
        })?;
    EncoderBackend::new(
        backend_id,
        checkpoint_ref,
        config,
        tokenizer,
        raw,
        spec.default_pooling,
    )
}

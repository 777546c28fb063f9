use std::path::Path;

use thiserror::Error;
use tokenizers::{PostProcessor, Tokenizer, TruncationDirection};

use super::CleanText;
use crate::corpus::CausalCategory;

#[derive(Debug, Error)]
pub enum SubwordError {
    #[error("cannot load tokenizer from {path}: {reason}")]
    Load { path: String, reason: String },
    #[error("tokenizer belongs to checkpoint `{tokenizer}` but encoder expects `{encoder}`")]
    Mismatch { tokenizer: String, encoder: String },
    #[error("tokenizer has no padding token")]
    NoPadToken,
    #[error("max_len {max_len} cannot hold the {special} special tokens")]
    MaxLenTooSmall { max_len: usize, special: usize },
    #[error("tokenization failed: {0}")]
    Tokenize(String),
}

/// A checkpoint's subword tokenizer, tagged with the checkpoint it came from.
#[derive(Clone)]
pub struct SubwordTokenizer {
    inner: Tokenizer,
    checkpoint: String,
    pad_id: u32,
    special_tokens: usize,
}

impl std::fmt::Debug for SubwordTokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubwordTokenizer")
            .field("checkpoint", &self.checkpoint)
            .field("pad_id", &self.pad_id)
            .field("special_tokens", &self.special_tokens)
            .finish()
    }
}

const PAD_CANDIDATES: [&str; 3] = ["[PAD]", "<pad>", "<PAD>"];

impl SubwordTokenizer {
    /// Loads a `tokenizer.json`. `pad_id` overrides the lookup of a padding token.
    pub fn from_file(
        path: &Path,
        checkpoint: &str,
        pad_id: Option<u32>,
    ) -> Result<Self, SubwordError> {
        let inner = Tokenizer::from_file(path).map_err(|e| SubwordError::Load {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::new(inner, checkpoint, pad_id)
    }

    pub fn new(
        mut inner: Tokenizer,
        checkpoint: &str,
        pad_id: Option<u32>,
    ) -> Result<Self, SubwordError> {
        // truncation and padding are applied here, not by the tokenizer's own settings
        inner
            .with_truncation(None)
            .map_err(|e| SubwordError::Tokenize(e.to_string()))?;
        inner.with_padding(None);
        let pad_id = match pad_id {
            Some(id) => id,
            None => PAD_CANDIDATES
                .iter()
                .find_map(|t| inner.token_to_id(t))
                .ok_or(SubwordError::NoPadToken)?,
        };
        let special_tokens = inner
            .get_post_processor()
            .map(|pp| pp.added_tokens(false))
            .unwrap_or(0);
        Ok(SubwordTokenizer {
            inner,
            checkpoint: checkpoint.to_string(),
            pad_id,
            special_tokens,
        })
    }

    pub fn checkpoint(&self) -> &str {
        &self.checkpoint
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    /// Special markers added around a single sequence.
    pub fn special_tokens(&self) -> usize {
        self.special_tokens
    }

    pub fn vocab_size(&self) -> usize {
        self.inner.get_vocab_size(true)
    }

    pub fn inner(&self) -> &Tokenizer {
        &self.inner
    }

    /// Subword ids of `text` without special markers or truncation.
    pub fn piece_ids(&self, text: &str) -> Result<Vec<u32>, SubwordError> {
        let enc = self
            .inner
            .encode(text, false)
            .map_err(|e| SubwordError::Tokenize(e.to_string()))?;
        Ok(enc.get_ids().to_vec())
    }
}

/// A fixed-length encoder input. `mask` is a run of ones followed by zeros.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub ids: Vec<u32>,
    pub type_ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub label: Option<CausalCategory>,
}

impl EncodedExample {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Count of real (non-padding) positions.
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn with_label(mut self, label: CausalCategory) -> Self {
        self.label = Some(label);
        self
    }

    /// Checks the length and mask-shape invariants.
    pub fn is_well_formed(&self, max_len: usize, pad_id: u32) -> bool {
        let real = self.real_len();
        self.ids.len() == max_len
            && self.mask.len() == max_len
            && self.type_ids.len() == max_len
            && self.mask[..real].iter().all(|&m| m == 1)
            && self.mask[real..].iter().all(|&m| m == 0)
            && self.ids[real..].iter().all(|&id| id == pad_id)
    }
}

/// Encodes `text` to exactly `max_len` positions: pieces are truncated on the
/// right so that the special markers still fit, then padding is appended.
pub fn encode_subword(
    text: &CleanText,
    tokenizer: &SubwordTokenizer,
    encoder_checkpoint: &str,
    max_len: usize,
) -> Result<EncodedExample, SubwordError> {
    if tokenizer.checkpoint() != encoder_checkpoint {
        return Err(SubwordError::Mismatch {
            tokenizer: tokenizer.checkpoint().to_string(),
            encoder: encoder_checkpoint.to_string(),
        });
    }
    let special = tokenizer.special_tokens();
    if max_len <= special {
        return Err(SubwordError::MaxLenTooSmall { max_len, special });
    }
    let tok_err = |e: tokenizers::Error| SubwordError::Tokenize(e.to_string());
    let mut enc = tokenizer
        .inner
        .encode(text.as_str(), false)
        .map_err(tok_err)?;
    enc.truncate(max_len - special, 0, TruncationDirection::Right);
    let enc = tokenizer
        .inner
        .post_process(enc, None, true)
        .map_err(tok_err)?;

    let real = enc.get_ids().len().min(max_len);
    let mut ids = enc.get_ids()[..real].to_vec();
    let mut type_ids = enc.get_type_ids()[..real].to_vec();
    let mut mask = vec![1u8; real];
    ids.resize(max_len, tokenizer.pad_id());
    type_ids.resize(max_len, 0);
    mask.resize(max_len, 0);
    Ok(EncodedExample {
        ids,
        type_ids,
        mask,
        label: None,
    })
}

//! Small randomly initialized checkpoints with a word-level tokenizer built
//! from a corpus. They exercise the full fine-tuning path offline; they are
//! not pre-trained.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::{json, Value};

use super::config::{Architecture, EncoderConfig};
use super::encoder::parameter_shapes;
use super::{FineTuneError, CONFIG_FILE, TOKENIZER_FILE, WEIGHTS_FILE};
use crate::corpus::Corpus;
use crate::nn::{self, Init};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TinySpec {
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub intermediate_size: usize,
    pub max_positions: usize,
}

impl Default for TinySpec {
    fn default() -> Self {
        TinySpec {
            hidden_size: 32,
            num_layers: 2,
            num_heads: 4,
            intermediate_size: 64,
            max_positions: 512,
        }
    }
}

/// Reserved tokens in id order, and the ids of padding and unknown.
struct Specials {
    tokens: &'static [&'static str],
    pad: &'static str,
    unk: &'static str,
    /// `(token, type_id)` before and after the sequence.
    before: &'static [(&'static str, u32)],
    after: &'static [(&'static str, u32)],
}

fn specials(arch: Architecture) -> Specials {
    match arch {
        Architecture::Bert | Architecture::DistilBert => Specials {
            tokens: &["[PAD]", "[UNK]", "[CLS]", "[SEP]"],
            pad: "[PAD]",
            unk: "[UNK]",
            before: &[("[CLS]", 0)],
            after: &[("[SEP]", 0)],
        },
        Architecture::Roberta => Specials {
            tokens: &["<s>", "<pad>", "</s>", "<unk>"],
            pad: "<pad>",
            unk: "<unk>",
            before: &[("<s>", 0)],
            after: &[("</s>", 0)],
        },
        Architecture::Xlnet => Specials {
            tokens: &["<unk>", "<s>", "</s>", "<cls>", "<sep>", "<pad>"],
            pad: "<pad>",
            unk: "<unk>",
            before: &[],
            after: &[("<sep>", 0), ("<cls>", 2)],
        },
    }
}

/// Lowercased words and punctuation marks of the corpus, in first-seen order.
fn corpus_words(corpus: &Corpus) -> Vec<String> {
    let re = Regex::new(r"\w+|[^\w\s]").expect("static pattern");
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for text in corpus.texts() {
        for m in re.find_iter(&text.to_lowercase()) {
            if seen.insert(m.as_str().to_string()) {
                out.push(m.as_str().to_string());
            }
        }
    }
    out
}

fn tokenizer_json(arch: Architecture, words: &[String]) -> (Value, usize, u32) {
    let sp = specials(arch);
    let mut vocab: BTreeMap<String, u32> = BTreeMap::new();
    for (i, t) in sp.tokens.iter().enumerate() {
        vocab.insert((*t).to_string(), i as u32);
    }
    for w in words {
        let next = vocab.len() as u32;
        vocab.entry(w.clone()).or_insert(next);
    }
    let added: Vec<Value> = sp
        .tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            json!({"id": i, "content": t, "single_word": false, "lstrip": false,
                   "rstrip": false, "normalized": false, "special": true})
        })
        .collect();
    let piece = |list: &[(&str, u32)]| -> Vec<Value> {
        list.iter()
            .map(|(t, ty)| json!({"SpecialToken": {"id": t, "type_id": ty}}))
            .collect()
    };
    let mut single = piece(sp.before);
    single.push(json!({"Sequence": {"id": "A", "type_id": 0}}));
    single.extend(piece(sp.after));
    let mut pair = single.clone();
    pair.push(json!({"Sequence": {"id": "B", "type_id": 1}}));
    pair.extend(piece(sp.after));
    let special_tokens: serde_json::Map<String, Value> = sp
        .before
        .iter()
        .chain(sp.after)
        .map(|(t, _)| {
            (
                (*t).to_string(),
                json!({"id": t, "ids": [vocab[*t]], "tokens": [t]}),
            )
        })
        .collect();
    let doc = json!({
        "version": "1.0",
        "truncation": null,
        "padding": null,
        "added_tokens": added,
        "normalizer": {"type": "Lowercase"},
        "pre_tokenizer": {"type": "BertPreTokenizer"},
        "post_processor": {
            "type": "TemplateProcessing",
            "single": single,
            "pair": pair,
            "special_tokens": special_tokens
        },
        "decoder": null,
        "model": {"type": "WordLevel", "vocab": vocab, "unk_token": sp.unk}
    });
    let len = vocab.len();
    (doc, len, vocab[sp.pad])
}

/// Writes `config.json`, `tokenizer.json` and `model.safetensors` for a
/// randomly initialized encoder of the given family into `dir`.
pub fn write_synthetic_checkpoint(
    dir: &Path,
    arch: Architecture,
    corpus: &Corpus,
    spec: TinySpec,
    seed: u64,
) -> Result<EncoderConfig, FineTuneError> {
    let io = |e: std::io::Error| FineTuneError::Retrieval(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let (tok, vocab_size, pad) = tokenizer_json(arch, &corpus_words(corpus));
    let config = EncoderConfig {
        architecture: arch,
        vocab_size,
        hidden_size: spec.hidden_size,
        num_layers: spec.num_layers,
        num_heads: spec.num_heads,
        intermediate_size: spec.intermediate_size,
        layer_norm_eps: 1e-12,
        max_positions: match arch {
            Architecture::Xlnet => 0,
            // Position ids start after the padding index.
            Architecture::Roberta => spec.max_positions + pad as usize + 1,
            _ => spec.max_positions,
        },
        type_vocab_size: match arch {
            Architecture::Bert => 2,
            Architecture::Roberta => 1,
            _ => 0,
        },
        pad_token_id: pad,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = Init { rng: &mut rng };
    let mut tensors: HashMap<String, Tensor> = HashMap::new();
    for (name, dims) in parameter_shapes(&config) {
        let norm = name.contains("LayerNorm") || name.contains("layer_norm");
        let t = if norm && name.ends_with(".weight") {
            nn::ones(&dims)?
        } else if name.ends_with(".bias") && dims.len() == 1 {
            nn::zeros(&dims)?
        } else {
            init.normal(&dims, 0.02)?
        };
        tensors.insert(name, t);
    }
    std::fs::write(dir.join(CONFIG_FILE), config.to_json()).map_err(io)?;
    std::fs::write(
        dir.join(TOKENIZER_FILE),
        serde_json::to_string_pretty(&tok).expect("json value"),
    )
    .map_err(io)?;
    candle_core::safetensors::save(&tensors, dir.join(WEIGHTS_FILE))?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::keyword_corpus;
    use crate::corpus::Split;
    use crate::finetune::{load_backend, BackendRegistry, LocalFetcher};
    use crate::textprep::{clean, encode_subword};

    #[test]
    fn every_family_loads_back() {
        let corpus = keyword_corpus(12, 0, Split::SdcnlTrain);
        let spec = TinySpec {
            hidden_size: 8,
            num_layers: 1,
            num_heads: 2,
            intermediate_size: 16,
            max_positions: 40,
        };
        for (id, arch) in [
            ("bert_emotion", Architecture::Bert),
            ("distilbert", Architecture::DistilBert),
            ("roberta", Architecture::Roberta),
            ("xlnet", Architecture::Xlnet),
        ] {
            let dir = tempfile::tempdir().unwrap();
            write_synthetic_checkpoint(dir.path(), arch, &corpus, spec, 1).unwrap();
            let path = dir.path().to_str().unwrap();
            let b = load_backend(
                &BackendRegistry::default(),
                &LocalFetcher::default(),
                id,
                Some(path),
            )
            .unwrap();
            assert_eq!(b.hidden_size(), 8);
            let e = encode_subword(&clean("My boss job"), b.tokenizer(), path, 16).unwrap();
            assert_eq!(e.real_len(), 3 + b.tokenizer().special_tokens());
            assert!(e.is_well_formed(16, b.config.pad_token_id));
            let h = b.hidden_states(&[e]).unwrap();
            assert_eq!(h.dims3().unwrap(), (1, 5, 8), "{id}");
        }
    }

    #[test]
    fn wrong_family_is_rejected() {
        let corpus = keyword_corpus(6, 0, Split::SdcnlTrain);
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_checkpoint(
            dir.path(),
            Architecture::Bert,
            &corpus,
            TinySpec::default(),
            1,
        )
        .unwrap();
        let err = load_backend(
            &BackendRegistry::default(),
            &LocalFetcher::default(),
            "xlnet",
            Some(dir.path().to_str().unwrap()),
        )
        .unwrap_err();
        assert!(matches!(err, FineTuneError::Corrupt(_)), "{err}");
    }
}

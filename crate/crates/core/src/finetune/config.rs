use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::FineTuneError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Bert,
    Roberta,
    DistilBert,
    Xlnet,
}

impl Architecture {
    pub fn model_type(self) -> &'static str {
        match self {
            Architecture::Bert => "bert",
            Architecture::Roberta => "roberta",
            Architecture::DistilBert => "distilbert",
            Architecture::Xlnet => "xlnet",
        }
    }

    pub fn from_model_type(t: &str) -> Option<Self> {
        [
            Architecture::Bert,
            Architecture::Roberta,
            Architecture::DistilBert,
            Architecture::Xlnet,
        ]
        .into_iter()
        .find(|a| a.model_type() == t)
    }
}

/// Shape and numerics of a checkpoint, as declared by its `config.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub architecture: Architecture,
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub intermediate_size: usize,
    pub layer_norm_eps: f64,
    /// 0 for relative-position encoders.
    pub max_positions: usize,
    /// 0 when the checkpoint has no segment embedding table.
    pub type_vocab_size: usize,
    pub pad_token_id: u32,
}

fn usize_key(v: &Value, keys: &[&str]) -> Option<usize> {
    keys.iter()
        .find_map(|k| v.get(*k).and_then(Value::as_u64))
        .map(|x| x as usize)
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn from_json(text: &str) -> Result<Self, FineTuneError> {
        let v: Value = serde_json::from_str(text)
            .map_err(|e| FineTuneError::Corrupt(format!("config.json: {e}")))?;
        let model_type = v
            .get("model_type")
            .and_then(Value::as_str)
            .ok_or_else(|| FineTuneError::Corrupt("config.json has no model_type".into()))?;
        let architecture = Architecture::from_model_type(model_type).ok_or_else(|| {
            FineTuneError::Corrupt(format!("unsupported model_type `{model_type}`"))
        })?;
        let need = |keys: &[&str]| {
            usize_key(&v, keys).ok_or_else(|| {
                FineTuneError::Corrupt(format!("config.json lacks {}", keys.join("/")))
            })
        };
        let hidden_size = need(&["hidden_size", "dim", "d_model"])?;
        let num_heads = need(&["num_attention_heads", "n_heads", "n_head"])?;
        let cfg = EncoderConfig {
            architecture,
            vocab_size: need(&["vocab_size"])?,
            hidden_size,
            num_layers: need(&["num_hidden_layers", "n_layers", "n_layer"])?,
            num_heads,
            intermediate_size: need(&["intermediate_size", "hidden_dim", "d_inner"])?,
            layer_norm_eps: v
                .get("layer_norm_eps")
                .and_then(Value::as_f64)
                .unwrap_or(1e-12),
            max_positions: usize_key(&v, &["max_position_embeddings"]).unwrap_or(0),
            type_vocab_size: match architecture {
                Architecture::DistilBert | Architecture::Xlnet => 0,
                _ => usize_key(&v, &["type_vocab_size"]).unwrap_or(2),
            },
            pad_token_id: usize_key(&v, &["pad_token_id"]).unwrap_or(0) as u32,
        };
        if cfg.hidden_size == 0
            || cfg.num_heads == 0
            || !cfg.hidden_size.is_multiple_of(cfg.num_heads)
        {
            return Err(FineTuneError::Corrupt(format!(
                "hidden size {} is not a positive multiple of {} heads",
                cfg.hidden_size, cfg.num_heads
            )));
        }
        if architecture == Architecture::Xlnet {
            if let Some(d) = usize_key(&v, &["d_head"]) {
                if d * num_heads != hidden_size {
                    return Err(FineTuneError::Corrupt(format!(
                        "d_head {d} × {num_heads} heads ≠ {hidden_size}"
                    )));
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, FineTuneError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FineTuneError::Retrieval(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// A `config.json` document this loader reads back identically.
    pub fn to_json(&self) -> String {
        let mut v = serde_json::json!({
            "model_type": self.architecture.model_type(),
            "vocab_size": self.vocab_size,
            "layer_norm_eps": self.layer_norm_eps,
            "pad_token_id": self.pad_token_id,
        });
        let o = v.as_object_mut().expect("object literal");
        let (h, l, n, i) = match self.architecture {
            Architecture::DistilBert => ("dim", "n_layers", "n_heads", "hidden_dim"),
            Architecture::Xlnet => ("d_model", "n_layer", "n_head", "d_inner"),
            _ => (
                "hidden_size",
                "num_hidden_layers",
                "num_attention_heads",
                "intermediate_size",
            ),
        };
        o.insert(h.into(), self.hidden_size.into());
        o.insert(l.into(), self.num_layers.into());
        o.insert(n.into(), self.num_heads.into());
        o.insert(i.into(), self.intermediate_size.into());
        if self.max_positions > 0 {
            o.insert("max_position_embeddings".into(), self.max_positions.into());
        }
        match self.architecture {
            Architecture::Bert | Architecture::Roberta => {
                o.insert("type_vocab_size".into(), self.type_vocab_size.into());
            }
            Architecture::Xlnet => {
                o.insert("d_head".into(), self.head_dim().into());
            }
            Architecture::DistilBert => {}
        }
        serde_json::to_string_pretty(&v).expect("json value")
    }
}

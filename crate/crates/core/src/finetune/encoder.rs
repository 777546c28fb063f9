//! Forward passes of the supported encoder families over a [`ParamStore`]
//! whose encoder tensors are named `encoder.<checkpoint name>`.
//!
//! Checkpoint names follow the common hub layout with any task-model prefix
//! (`bert.`, `roberta.`, `distilbert.`, `transformer.`) removed.

use std::collections::HashMap;

use candle_core::{DType, Device, Result, Tensor, D};

use super::config::{Architecture, EncoderConfig};
use super::FineTuneError;
use crate::nn::{self, ParamStore};
use crate::textprep::EncodedExample;

pub(crate) const ENCODER_PREFIX: &str = "encoder.";

/// Additive score for masked attention keys.
const MASK_BIAS: f64 = -1e9;
/// Relative-attention mask scale, as in the reference implementation.
const XLNET_MASK_BIAS: f64 = -1e30;

fn task_prefix(arch: Architecture) -> &'static str {
    match arch {
        Architecture::Bert => "bert.",
        Architecture::Roberta => "roberta.",
        Architecture::DistilBert => "distilbert.",
        Architecture::Xlnet => "transformer.",
    }
}

/// Every tensor the forward pass reads, with its shape.
pub(crate) fn parameter_shapes(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let (h, i, v) = (cfg.hidden_size, cfg.intermediate_size, cfg.vocab_size);
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    let mut add = |name: String, dims: &[usize]| out.push((name, dims.to_vec()));
    let norm = |add: &mut dyn FnMut(String, &[usize]), base: &str| {
        add(format!("{base}.weight"), &[h]);
        add(format!("{base}.bias"), &[h]);
    };
    let lin = |add: &mut dyn FnMut(String, &[usize]), base: &str, o: usize, n: usize| {
        add(format!("{base}.weight"), &[o, n]);
        add(format!("{base}.bias"), &[o]);
    };
    match cfg.architecture {
        Architecture::Bert | Architecture::Roberta => {
            add("embeddings.word_embeddings.weight".into(), &[v, h]);
            add(
                "embeddings.position_embeddings.weight".into(),
                &[cfg.max_positions, h],
            );
            if cfg.type_vocab_size > 0 {
                add(
                    "embeddings.token_type_embeddings.weight".into(),
                    &[cfg.type_vocab_size, h],
                );
            }
            norm(&mut add, "embeddings.LayerNorm");
            for l in 0..cfg.num_layers {
                let p = format!("encoder.layer.{l}");
                for n in ["query", "key", "value"] {
                    lin(&mut add, &format!("{p}.attention.self.{n}"), h, h);
                }
                lin(&mut add, &format!("{p}.attention.output.dense"), h, h);
                norm(&mut add, &format!("{p}.attention.output.LayerNorm"));
                lin(&mut add, &format!("{p}.intermediate.dense"), i, h);
                lin(&mut add, &format!("{p}.output.dense"), h, i);
                norm(&mut add, &format!("{p}.output.LayerNorm"));
            }
        }
        Architecture::DistilBert => {
            add("embeddings.word_embeddings.weight".into(), &[v, h]);
            add(
                "embeddings.position_embeddings.weight".into(),
                &[cfg.max_positions, h],
            );
            norm(&mut add, "embeddings.LayerNorm");
            for l in 0..cfg.num_layers {
                let p = format!("transformer.layer.{l}");
                for n in ["q_lin", "k_lin", "v_lin", "out_lin"] {
                    lin(&mut add, &format!("{p}.attention.{n}"), h, h);
                }
                norm(&mut add, &format!("{p}.sa_layer_norm"));
                lin(&mut add, &format!("{p}.ffn.lin1"), i, h);
                lin(&mut add, &format!("{p}.ffn.lin2"), h, i);
                norm(&mut add, &format!("{p}.output_layer_norm"));
            }
        }
        Architecture::Xlnet => {
            let (n, dh) = (cfg.num_heads, cfg.head_dim());
            add("word_embedding.weight".into(), &[v, h]);
            for l in 0..cfg.num_layers {
                let p = format!("layer.{l}");
                for w in ["q", "k", "v", "o", "r"] {
                    add(format!("{p}.rel_attn.{w}"), &[h, n, dh]);
                }
                for b in ["r_w_bias", "r_r_bias", "r_s_bias"] {
                    add(format!("{p}.rel_attn.{b}"), &[n, dh]);
                }
                add(format!("{p}.rel_attn.seg_embed"), &[2, n, dh]);
                norm(&mut add, &format!("{p}.rel_attn.layer_norm"));
                lin(&mut add, &format!("{p}.ff.layer_1"), i, h);
                lin(&mut add, &format!("{p}.ff.layer_2"), h, i);
                norm(&mut add, &format!("{p}.ff.layer_norm"));
            }
        }
    }
    out
}

/// Strips task-model prefixes and legacy LayerNorm names, keeps only the
/// tensors the forward pass reads, and checks their shapes.
pub(crate) fn normalize_weights(
    cfg: &EncoderConfig,
    raw: HashMap<String, Tensor>,
) -> std::result::Result<HashMap<String, Tensor>, FineTuneError> {
    let prefix = task_prefix(cfg.architecture);
    let mut renamed: HashMap<String, Tensor> = HashMap::new();
    for (name, t) in raw {
        let mut n = name.strip_prefix(prefix).unwrap_or(&name).to_string();
        if n.contains("LayerNorm.") || n.contains("layer_norm.") {
            n = n.replace(".gamma", ".weight").replace(".beta", ".bias");
        }
        renamed.insert(n, t);
    }
    let mut out = HashMap::new();
    for (name, dims) in parameter_shapes(cfg) {
        let t = renamed
            .remove(&name)
            .ok_or_else(|| FineTuneError::Corrupt(format!("checkpoint lacks tensor `{name}`")))?;
        if t.dims() != dims.as_slice() {
            return Err(FineTuneError::Corrupt(format!(
                "tensor `{name}` has shape {:?}, config implies {dims:?}",
                t.dims()
            )));
        }
        out.insert(name, t.to_dtype(DType::F32)?);
    }
    Ok(out)
}

/// A batch trimmed to its longest real sequence. Trailing padding is masked
/// out of every attention, so trimming leaves real positions unchanged.
pub(crate) struct Batch {
    pub ids: Tensor,
    pub type_ids: Tensor,
    pub positions: Option<Tensor>,
    /// `[B, L]` 1.0 for real tokens.
    pub mask: Tensor,
    pub masks: Vec<Vec<u8>>,
}

impl Batch {
    pub fn new(examples: &[&EncodedExample], cfg: &EncoderConfig) -> Result<Self> {
        let b = examples.len();
        let len = examples
            .iter()
            .map(|e| e.real_len())
            .max()
            .unwrap_or(1)
            .max(1);
        let take = |v: &[u32]| v[..len].to_vec();
        let ids: Vec<u32> = examples.iter().flat_map(|e| take(&e.ids)).collect();
        let type_ids: Vec<u32> = examples.iter().flat_map(|e| take(&e.type_ids)).collect();
        let masks: Vec<Vec<u8>> = examples.iter().map(|e| e.mask[..len].to_vec()).collect();
        let mask_f: Vec<f32> = masks.iter().flatten().map(|&m| f32::from(m)).collect();
        let positions = match cfg.architecture {
            Architecture::Bert | Architecture::DistilBert => {
                Some((0..b).flat_map(|_| 0..len as u32).collect::<Vec<u32>>())
            }
            // Running count of non-padding ids, offset past the padding index.
            Architecture::Roberta => Some(
                ids.chunks(len)
                    .flat_map(|row| {
                        let mut seen = 0u32;
                        row.iter()
                            .map(|&id| {
                                if id == cfg.pad_token_id {
                                    cfg.pad_token_id
                                } else {
                                    seen += 1;
                                    seen + cfg.pad_token_id
                                }
                            })
                            .collect::<Vec<_>>()
                    })
                    .collect(),
            ),
            Architecture::Xlnet => None,
        };
        let dev = &Device::Cpu;
        Ok(Batch {
            ids: Tensor::from_vec(ids, (b, len), dev)?,
            type_ids: Tensor::from_vec(type_ids, (b, len), dev)?,
            positions: positions
                .map(|p| Tensor::from_vec(p, (b, len), dev))
                .transpose()?,
            mask: Tensor::from_vec(mask_f, (b, len), dev)?,
            masks,
        })
    }
}

struct Weights<'a> {
    params: &'a ParamStore,
}

impl Weights<'_> {
    fn get(&self, name: &str) -> Result<Tensor> {
        self.params.require(&format!("{ENCODER_PREFIX}{name}"))
    }

    fn linear(&self, x: &Tensor, base: &str) -> Result<Tensor> {
        nn::linear(
            x,
            &self.get(&format!("{base}.weight"))?,
            Some(&self.get(&format!("{base}.bias"))?),
        )
    }

    fn norm(&self, x: &Tensor, base: &str, eps: f64) -> Result<Tensor> {
        nn::layer_norm(
            x,
            &self.get(&format!("{base}.weight"))?,
            &self.get(&format!("{base}.bias"))?,
            eps,
        )
    }
}

/// `[B, L, H]` to `[B, heads, L, H / heads]`.
fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, l, h) = x.dims3()?;
    x.reshape((b, l, heads, h / heads))?
        .transpose(1, 2)?
        .contiguous()
}

fn merge_heads(x: &Tensor) -> Result<Tensor> {
    let (b, n, l, d) = x.dims4()?;
    x.transpose(1, 2)?.contiguous()?.reshape((b, l, n * d))
}

/// Last hidden states `[B, L, H]`.
pub(crate) fn forward(params: &ParamStore, cfg: &EncoderConfig, batch: &Batch) -> Result<Tensor> {
    let w = Weights { params };
    match cfg.architecture {
        Architecture::Xlnet => xlnet_forward(&w, cfg, batch),
        _ => bert_forward(&w, cfg, batch),
    }
}

fn bert_forward(w: &Weights, cfg: &EncoderConfig, batch: &Batch) -> Result<Tensor> {
    let eps = cfg.layer_norm_eps;
    let positions = batch.positions.as_ref().expect("absolute-position family");
    let mut x = (nn::embed(&w.get("embeddings.word_embeddings.weight")?, &batch.ids)?
        + nn::embed(&w.get("embeddings.position_embeddings.weight")?, positions)?)?;
    if cfg.type_vocab_size > 0 {
        x = (x + nn::embed(
            &w.get("embeddings.token_type_embeddings.weight")?,
            &batch.type_ids,
        )?)?;
    }
    x = w.norm(&x, "embeddings.LayerNorm", eps)?;

    let (b, l) = batch.ids.dims2()?;
    let bias = ((batch.mask.ones_like()? - &batch.mask)? * MASK_BIAS)?.reshape((b, 1, 1, l))?;
    let heads = cfg.num_heads;
    let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
    let distil = cfg.architecture == Architecture::DistilBert;
    for layer in 0..cfg.num_layers {
        let names: [String; 9] = if distil {
            let p = format!("transformer.layer.{layer}");
            [
                format!("{p}.attention.q_lin"),
                format!("{p}.attention.k_lin"),
                format!("{p}.attention.v_lin"),
                format!("{p}.attention.out_lin"),
                format!("{p}.sa_layer_norm"),
                format!("{p}.ffn.lin1"),
                format!("{p}.ffn.lin2"),
                format!("{p}.output_layer_norm"),
                p,
            ]
        } else {
            let p = format!("encoder.layer.{layer}");
            [
                format!("{p}.attention.self.query"),
                format!("{p}.attention.self.key"),
                format!("{p}.attention.self.value"),
                format!("{p}.attention.output.dense"),
                format!("{p}.attention.output.LayerNorm"),
                format!("{p}.intermediate.dense"),
                format!("{p}.output.dense"),
                format!("{p}.output.LayerNorm"),
                p,
            ]
        };
        let q = split_heads(&w.linear(&x, &names[0])?, heads)?;
        let k = split_heads(&w.linear(&x, &names[1])?, heads)?;
        let v = split_heads(&w.linear(&x, &names[2])?, heads)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?.broadcast_add(&bias)?;
        let probs = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let ctx = merge_heads(&probs.matmul(&v)?)?;
        let attn = w.norm(&(w.linear(&ctx, &names[3])? + &x)?, &names[4], eps)?;
        let inner = w.linear(&attn, &names[5])?.gelu_erf()?;
        x = w.norm(&(w.linear(&inner, &names[6])? + &attn)?, &names[7], eps)?;
    }
    Ok(x)
}

/// Sinusoids for relative distances `L, L-1, ..., -L+1`, shape `[2L, D]`.
fn relative_positions(len: usize, d_model: usize) -> Result<Tensor> {
    let half = d_model / 2;
    let mut data = vec![0f32; 2 * len * d_model];
    for (row, chunk) in data.chunks_mut(d_model).enumerate() {
        let pos = len as f64 - row as f64;
        for k in 0..half {
            let inv_freq = 1.0 / 10000f64.powf((2 * k) as f64 / d_model as f64);
            let angle = pos * inv_freq;
            chunk[k] = angle.sin() as f32;
            chunk[half + k] = angle.cos() as f32;
        }
    }
    Tensor::from_vec(data, (2 * len, d_model), &Device::Cpu)
}

/// `[B, n, L, 2L]` scores indexed by relative offset, realigned so that
/// entry `[i][j]` holds the score for distance `i - j`.
fn rel_shift(x: &Tensor) -> Result<Tensor> {
    let (b, n, l, two_l) = x.dims4()?;
    x.reshape((b, n, two_l, l))?
        .narrow(2, 1, two_l - 1)?
        .contiguous()?
        .reshape((b, n, l, two_l - 1))?
        .narrow(3, 0, l)
}

fn xlnet_forward(w: &Weights, cfg: &EncoderConfig, batch: &Batch) -> Result<Tensor> {
    let eps = cfg.layer_norm_eps;
    let (b, l) = batch.ids.dims2()?;
    let (n, dh, d) = (cfg.num_heads, cfg.head_dim(), cfg.hidden_size);
    let scale = 1.0 / (dh as f64).sqrt();
    let dev = &Device::Cpu;

    // Key j is blocked for query i when j is padding and i != j.
    let mut block = vec![0f32; b * l * l];
    let mut differ = vec![0f32; b * l * l];
    let types = batch.type_ids.to_vec2::<u32>()?;
    for bi in 0..b {
        for i in 0..l {
            for j in 0..l {
                let at = (bi * l + i) * l + j;
                if batch.masks[bi][j] == 0 && i != j {
                    block[at] = 1.0;
                }
                if types[bi][i] != types[bi][j] {
                    differ[at] = 1.0;
                }
            }
        }
    }
    let block = (Tensor::from_vec(block, (b, 1, l, l), dev)? * XLNET_MASK_BIAS)?;
    let differ = Tensor::from_vec(differ, (b, 1, l, l), dev)?;
    let pos = relative_positions(l, d)?;

    let mut h = nn::embed(&w.get("word_embedding.weight")?, &batch.ids)?;
    for layer in 0..cfg.num_layers {
        let p = format!("layer.{layer}.rel_attn");
        let proj = |x: &Tensor, name: &str| -> Result<Tensor> {
            x.broadcast_matmul(&w.get(&format!("{p}.{name}"))?.reshape((d, n * dh))?)
        };
        let bias = |name: &str| -> Result<Tensor> {
            w.get(&format!("{p}.{name}"))?.reshape((1, n, 1, dh))
        };
        let q = split_heads(&proj(&h, "q")?, n)?; // [B, n, L, dh]
        let k = split_heads(&proj(&h, "k")?, n)?;
        let v = split_heads(&proj(&h, "v")?, n)?;
        let kr = proj(&pos, "r")?
            .reshape((2 * l, n, dh))?
            .transpose(0, 1)?
            .contiguous()?; // [n, 2L, dh]

        let ac = q
            .broadcast_add(&bias("r_w_bias")?)?
            .matmul(&k.t()?.contiguous()?)?;
        let bd = q
            .broadcast_add(&bias("r_r_bias")?)?
            .broadcast_matmul(&kr.t()?.contiguous()?.unsqueeze(0)?)?;
        let bd = rel_shift(&bd)?;
        let seg = w
            .get(&format!("{p}.seg_embed"))?
            .permute((1, 2, 0))?
            .contiguous()?; // [n, dh, 2]
        let ef = q
            .broadcast_add(&bias("r_s_bias")?)?
            .broadcast_matmul(&seg.unsqueeze(0)?)?; // [B, n, L, 2]
        let same = ef.narrow(3, 0, 1)?;
        let other = ef.narrow(3, 1, 1)?;
        let ef = same.broadcast_add(&differ.broadcast_mul(&(other - &same)?)?)?;

        let score = ((ac + bd)? + ef)?
            .affine(scale, 0.0)?
            .broadcast_add(&block)?;
        let probs = candle_nn::ops::softmax(&score, D::Minus1)?;
        let attn = merge_heads(&probs.matmul(&v)?)?;
        let o = w.get(&format!("{p}.o"))?.reshape((d, n * dh))?;
        let attn = nn::linear(&attn, &o, None)?;
        let out = w.norm(&(attn + &h)?, &format!("{p}.layer_norm"), eps)?;

        let f = format!("layer.{layer}.ff");
        let inner = w.linear(&out, &format!("{f}.layer_1"))?.gelu_erf()?;
        h = w.norm(
            &(w.linear(&inner, &format!("{f}.layer_2"))? + &out)?,
            &format!("{f}.layer_norm"),
            eps,
        )?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_shift_aligns_offsets() {
        // raw[i][k] encodes the relative distance L - k of column k.
        let (l, two_l) = (3usize, 6usize);
        let mut raw = Vec::new();
        for _i in 0..l {
            for k in 0..two_l {
                raw.push(l as f32 - k as f32);
            }
        }
        let x = Tensor::from_vec(raw, (1, 1, l, two_l), &Device::Cpu).unwrap();
        let y = rel_shift(&x)
            .unwrap()
            .squeeze(0)
            .unwrap()
            .squeeze(0)
            .unwrap();
        let y = y.to_vec2::<f32>().unwrap();
        for (i, row) in y.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, i as f32 - j as f32);
            }
        }
    }

    #[test]
    fn roberta_positions_skip_padding() {
        let cfg = EncoderConfig {
            architecture: Architecture::Roberta,
            vocab_size: 10,
            hidden_size: 4,
            num_layers: 1,
            num_heads: 1,
            intermediate_size: 4,
            layer_norm_eps: 1e-5,
            max_positions: 10,
            type_vocab_size: 1,
            pad_token_id: 1,
        };
        let e = EncodedExample {
            ids: vec![0, 5, 2, 1, 1],
            type_ids: vec![0; 5],
            mask: vec![1, 1, 1, 0, 0],
            label: None,
        };
        let batch = Batch::new(&[&e], &cfg).unwrap();
        assert_eq!(
            batch.positions.unwrap().to_vec2::<u32>().unwrap(),
            vec![vec![2, 3, 4]]
        );
    }
}

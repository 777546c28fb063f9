//! Small tensor helpers shared by the CNN-LSTM baseline and the encoders:
//! a named parameter store with seeded initialization, and differentiable
//! building blocks written against candle's primitive ops.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Result, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

/// Named trainable tensors, iterated in name order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tensors(tensors: HashMap<String, Tensor>) -> Result<Self> {
        let mut store = ParamStore::new();
        for (name, t) in tensors {
            let t = if t.dtype() == DType::F32 {
                t
            } else {
                t.to_dtype(DType::F32)?
            };
            store.insert(&name, t)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<Tensor> {
        let var = Var::from_tensor(&tensor)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(t)
    }

    pub fn get(&self, name: &str) -> Option<Tensor> {
        self.vars.get(name).map(|v| v.as_tensor().clone())
    }

    pub fn require(&self, name: &str) -> Result<Tensor> {
        self.get(name)
            .ok_or_else(|| candle_core::Error::Msg(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Deep copy of the current values.
    pub fn snapshot(&self) -> Result<HashMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    pub fn restore(&self, snapshot: &HashMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            if let Some(t) = snapshot.get(name) {
                var.set(t)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map: HashMap<String, Tensor> = self
            .vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&map, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensors(candle_core::safetensors::load(path, &Device::Cpu)?)
    }

    /// Hex SHA-256 over names, shapes and little-endian bytes of every value.
    pub fn digest(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, var) in &self.vars {
            h.update(name.as_bytes());
            h.update(format!("{:?}", var.dims()).as_bytes());
            for x in var.as_tensor().flatten_all()?.to_vec1::<f32>()? {
                h.update(x.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }
}

/// Deterministic initializers driven by a seeded generator.
pub struct Init<'a> {
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    pub fn normal(&mut self, dims: &[usize], std: f64) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        let dist = Normal::new(0.0, std).expect("std is finite and positive");
        let data: Vec<f32> = (0..n).map(|_| dist.sample(self.rng) as f32).collect();
        Tensor::from_vec(data, dims, &Device::Cpu)
    }

    pub fn uniform(&mut self, dims: &[usize], bound: f64) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        let data: Vec<f32> = (0..n)
            .map(|_| self.rng.random_range(-bound..bound) as f32)
            .collect();
        Tensor::from_vec(data, dims, &Device::Cpu)
    }

    pub fn glorot(&mut self, dims: &[usize], fan_in: usize, fan_out: usize) -> Result<Tensor> {
        self.uniform(dims, (6.0 / (fan_in + fan_out) as f64).sqrt())
    }
}

pub fn zeros(dims: &[usize]) -> Result<Tensor> {
    Tensor::zeros(dims, DType::F32, &Device::Cpu)
}

pub fn ones(dims: &[usize]) -> Result<Tensor> {
    Tensor::ones(dims, DType::F32, &Device::Cpu)
}

/// `x @ weight^T + bias` for a `[out, in]` weight (PyTorch layout).
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let y = x.broadcast_matmul(&weight.t()?)?;
    match bias {
        Some(b) => y.broadcast_add(b),
        None => Ok(y),
    }
}

/// Valid 1-D convolution with stride 1: `[B, C, L]` input and `[F, C, K]`
/// weight give `[B, F, L - K + 1]`. Built from narrow and matmul so the
/// backward pass only uses ops with verified gradients.
pub fn conv1d(x: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let (b, c, l) = x.dims3()?;
    let (f, wc, k) = weight.dims3()?;
    if wc != c || k == 0 || k > l {
        candle_core::bail!("conv1d: input [{b}, {c}, {l}] does not fit weight [{f}, {wc}, {k}]");
    }
    let out = l - k + 1;
    let taps = (0..k)
        .map(|j| x.narrow(2, j, out))
        .collect::<Result<Vec<_>>>()?;
    let patches = Tensor::stack(&taps, 2)?.reshape((b, c * k, out))?; // [B, C*K, L']
    weight.reshape((1, f, c * k))?.broadcast_matmul(&patches)
}

/// Maximum over the last dimension; the gradient goes to the first maximal
/// element only, so tied inputs do not receive duplicated gradient.
pub fn max_last(x: &Tensor) -> Result<Tensor> {
    let idx = x.detach().argmax_keepdim(D::Minus1)?;
    x.gather(&idx, D::Minus1)?.squeeze(D::Minus1)
}

/// Layer normalization over the last dimension.
pub fn layer_norm(x: &Tensor, weight: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + eps)?.sqrt()?)?;
    normed.broadcast_mul(weight)?.broadcast_add(bias)
}

/// Logistic function from primitive ops.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    (x.neg()?.exp()? + 1.0)?.recip()
}

/// Row lookup: `[B, L]` ids into a `[V, H]` table gives `[B, L, H]`.
pub fn embed(table: &Tensor, ids: &Tensor) -> Result<Tensor> {
    let (b, l) = ids.dims2()?;
    let h = table.dim(1)?;
    table
        .index_select(&ids.flatten_all()?, 0)?
        .reshape((b, l, h))
}

/// Mean cross entropy of `[B, C]` logits against `[B]` u32 targets.
pub fn cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    candle_nn::loss::cross_entropy(logits, targets)
}

/// Row-wise probabilities of `[B, C]` logits as f64 arrays.
pub fn probabilities<const C: usize>(logits: &Tensor) -> Result<Vec<[f64; C]>> {
    let p = candle_nn::ops::softmax(&logits.to_dtype(DType::F64)?, D::Minus1)?;
    Ok(p.to_vec2::<f64>()?
        .into_iter()
        .map(|row| {
            let mut out = [0.0; C];
            out.copy_from_slice(&row[..C]);
            out
        })
        .collect())
}

//! Named trainable parameters with seeded initialization.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};

/// Ordered collection of variables; names are `<module>.<tensor>`.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Uniform(−bound, bound) initialization from a seeded stream.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut ChaCha8Rng, dtype: DType) -> Result<Var> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        let t = Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(dtype)?;
        let var = Var::from_tensor(&t)?;
        if self.vars.insert(name.to_string(), var.clone()).is_some() {
            return Err(NnError::Config(format!("parameter `{name}` declared twice")));
        }
        Ok(var)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Variables whose names start with any of the prefixes.
    pub fn subset(&self, prefixes: &[&str]) -> Vec<(String, Var)> {
        self.vars
            .iter()
            .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
            .map(|(n, v)| (n.clone(), v.clone()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Flattened f32 copies of every parameter.
    pub fn export(&self) -> Result<BTreeMap<String, (Vec<usize>, Vec<f32>)>> {
        self.vars
            .iter()
            .map(|(n, v)| {
                let data = v.as_tensor().to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
                Ok((n.clone(), (v.dims().to_vec(), data)))
            })
            .collect()
    }

    /// Overwrites parameter values; every stored parameter must be present with its shape.
    pub fn import(&self, values: &BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> Result<()> {
        for (name, var) in &self.vars {
            let (shape, data) = values
                .get(name)
                .ok_or_else(|| NnError::Checkpoint(format!("missing parameter `{name}`")))?;
            if shape.as_slice() != var.dims() {
                return Err(NnError::Checkpoint(format!(
                    "parameter `{name}` has shape {shape:?}, expected {:?}",
                    var.dims()
                )));
            }
            let t = Tensor::from_vec(data.clone(), shape.as_slice(), &Device::Cpu)?.to_dtype(var.dtype())?;
            var.set(&t)?;
        }
        Ok(())
    }
}

/// Fully connected layer `y = x W + b` with `W` stored as (in, out).
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Var,
    pub b: Var,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng, dtype: DType) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = store.uniform(&format!("{name}.w"), &[fan_in, fan_out], bound, rng, dtype)?;
        let b = store.uniform(&format!("{name}.b"), &[fan_out], bound, rng, dtype)?;
        Ok(Self { w, b })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(self.w.as_tensor())?.broadcast_add(self.b.as_tensor())?)
    }
}

/// 3×3 convolution with padding 1.
#[derive(Debug, Clone)]
pub struct Conv3 {
    pub w: Var,
    pub b: Var,
    pub stride: usize,
}

impl Conv3 {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
        dtype: DType,
    ) -> Result<Self> {
        let bound = 1.0 / ((c_in * 9) as f64).sqrt();
        let w = store.uniform(&format!("{name}.w"), &[c_out, c_in, 3, 3], bound, rng, dtype)?;
        let b = store.uniform(&format!("{name}.b"), &[c_out], bound, rng, dtype)?;
        Ok(Self { w, b, stride })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.w.as_tensor(), 1, self.stride, 1, 1)?;
        Ok(y.broadcast_add(&self.b.as_tensor().reshape((1, (), 1, 1))?)?)
    }
}

/// Numerically stable `log Σ exp` over `dim`, dropping that dimension.
pub fn logsumexp(x: &Tensor, dim: usize) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    let shifted = x.broadcast_sub(&max)?.exp()?.sum_keepdim(dim)?.log()?;
    Ok(shifted.broadcast_add(&max)?.squeeze(dim)?)
}

/// Row-wise log-softmax over the last dimension.
pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::log_softmax(x, D::Minus1)?)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

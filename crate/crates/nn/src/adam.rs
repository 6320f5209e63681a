//! Adam over named variables with host-side moment buffers.
//!
//! Parameters are mirrored on the host so a step costs one gradient read
//! and one write per variable.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};

use crate::error::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Slot {
    name: String,
    var: Var,
    value: Vec<f32>,
    m: Vec<f32>,
    v: Vec<f32>,
}

pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    slots: Vec<Slot>,
}

impl Adam {
    pub fn new(vars: Vec<(String, Var)>, cfg: AdamConfig) -> Result<Self> {
        let slots = vars
            .into_iter()
            .map(|(name, var)| {
                let value = var.as_tensor().to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
                let n = value.len();
                Ok(Slot {
                    name,
                    var,
                    value,
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { cfg, step: 0, slots })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lr = (self.cfg.lr * c2.sqrt() / c1) as f32;
        let (b1, b2, eps) = (b1 as f32, b2 as f32, (self.cfg.eps * c2.sqrt()) as f32);
        for slot in &mut self.slots {
            let Some(g) = grads.get(slot.var.as_tensor()) else {
                continue;
            };
            let g = g.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
            for i in 0..g.len() {
                slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * g[i];
                slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * g[i] * g[i];
                slot.value[i] -= lr * slot.m[i] / (slot.v[i].sqrt() + eps);
            }
            let t = Tensor::from_slice(&slot.value, slot.var.dims(), slot.var.device())?.to_dtype(slot.var.dtype())?;
            slot.var.set(&t)?;
        }
        Ok(())
    }

    /// Moment buffers keyed `<prefix>m/<name>` and `<prefix>v/<name>`.
    pub fn export(&self, prefix: &str) -> BTreeMap<String, (Vec<usize>, Vec<f32>)> {
        let mut out = BTreeMap::new();
        for s in &self.slots {
            let shape = s.var.dims().to_vec();
            out.insert(format!("{prefix}m/{}", s.name), (shape.clone(), s.m.clone()));
            out.insert(format!("{prefix}v/{}", s.name), (shape, s.v.clone()));
        }
        out
    }

    /// Restores moments and step count, and re-reads the current parameter values.
    pub fn import(&mut self, prefix: &str, step: u64, tensors: &BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> Result<()> {
        for s in &mut self.slots {
            for (key, dst) in [("m", &mut s.m), ("v", &mut s.v)] {
                let name = format!("{prefix}{key}/{}", s.name);
                let (_, data) = tensors
                    .get(&name)
                    .ok_or_else(|| NnError::Checkpoint(format!("missing optimizer state `{name}`")))?;
                if data.len() != dst.len() {
                    return Err(NnError::Checkpoint(format!("optimizer state `{name}` has wrong length")));
                }
                dst.copy_from_slice(data);
            }
            s.value = s.var.as_tensor().to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        }
        self.step = step;
        Ok(())
    }
}

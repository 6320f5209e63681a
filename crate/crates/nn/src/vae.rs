//! Variational autoencoder family: β-VAE, β-TCVAE, DIP-VAE-I, FactorVAE,
//! their semi-supervised forms and SS-FVAE-BB.
//!
//! The encoder and decoder are MLPs over the pooled image; the decoder emits
//! Bernoulli logits per pooled cell, which are sigmoid-mapped and upsampled to
//! the native frame on generation.

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use cdbench_core::metrics::LatentGenerator;
use cdbench_core::ImageBatch;
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Geometry;
use crate::error::{NnError, Result};
use crate::losses;
use crate::params::{seeded, Dense, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaseVariant {
    BetaVae,
    BetaTcVae,
    DipVaeI,
    FactorVae,
}

impl BaseVariant {
    pub const ALL: [BaseVariant; 4] = [Self::BetaVae, Self::BetaTcVae, Self::DipVaeI, Self::FactorVae];

    pub fn name(self) -> &'static str {
        match self {
            Self::BetaVae => "beta-vae",
            Self::BetaTcVae => "beta-tcvae",
            Self::DipVaeI => "dip-vae-i",
            Self::FactorVae => "factor-vae",
        }
    }
}

/// A loss variant: base regularizer, optional label supervision and optional
/// bounding-box reconstruction penalty (only with supervised FactorVAE).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VariantSpec {
    pub base: BaseVariant,
    pub supervised: bool,
    pub bbox: bool,
}

impl VariantSpec {
    pub const fn unsupervised(base: BaseVariant) -> Self {
        Self {
            base,
            supervised: false,
            bbox: false,
        }
    }

    pub const fn supervised(base: BaseVariant) -> Self {
        Self {
            base,
            supervised: true,
            bbox: false,
        }
    }

    pub const SS_FVAE_BB: Self = Self {
        base: BaseVariant::FactorVae,
        supervised: true,
        bbox: true,
    };

    /// The four unsupervised variants followed by their supervised forms.
    pub fn standard_eight() -> Vec<Self> {
        BaseVariant::ALL
            .iter()
            .map(|&b| Self::unsupervised(b))
            .chain(BaseVariant::ALL.iter().map(|&b| Self::supervised(b)))
            .collect()
    }

    pub fn all() -> Vec<Self> {
        let mut v = Self::standard_eight();
        v.push(Self::SS_FVAE_BB);
        v
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.bbox {
            return f.write_str("ss-fvae-bb");
        }
        if self.supervised {
            f.write_str("ss-")?;
        }
        f.write_str(self.base.name())
    }
}

impl FromStr for VariantSpec {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "ss-fvae-bb" {
            return Ok(Self::SS_FVAE_BB);
        }
        let (supervised, rest) = match s.strip_prefix("ss-") {
            Some(r) => (true, r),
            None => (false, s),
        };
        let base = BaseVariant::ALL
            .into_iter()
            .find(|b| b.name() == rest)
            .ok_or_else(|| NnError::Config(format!("unknown model variant `{s}`")))?;
        Ok(Self {
            base,
            supervised,
            bbox: false,
        })
    }
}

impl Serialize for VariantSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VariantSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Regularizer weights used by the loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta: f64,
    pub gamma: f64,
    pub lambda_d: f64,
    pub lambda_od: f64,
    pub supervised_weight: f64,
    pub lambda_bb: f64,
}

/// Shape-defining settings, stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub variant: VariantSpec,
    pub geometry: Geometry,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// Per-factor class counts for the supervised heads (empty when unsupervised).
    pub cardinalities: Vec<usize>,
    pub disc_hidden: usize,
}

/// Posterior of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
    pub sample: Vec<f64>,
}

/// Tensors for one training minibatch.
pub struct Minibatch {
    /// B × d pooled targets.
    pub x: Tensor,
    /// B × m reparameterization noise.
    pub eps: Tensor,
    /// Rows of the batch that carry labels, with one u32 target vector per factor.
    pub labeled_rows: Option<(Tensor, Vec<Tensor>)>,
    /// Mask moments (count, sum, sum of squares), each B × d.
    pub masks: Option<(Tensor, Tensor, Tensor)>,
    pub dataset_size: usize,
}

/// Loss value and detached per-term values.
pub struct LossOutput {
    pub total: Tensor,
    pub terms: LossTerms,
    pub z: Tensor,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub regularizer: f64,
    pub supervised: f64,
    pub bbox: f64,
    pub discriminator: f64,
}

impl LossTerms {
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("reconstruction", self.reconstruction),
            ("kl", self.kl),
            ("regularizer", self.regularizer),
            ("supervised", self.supervised),
            ("bbox", self.bbox),
            ("discriminator", self.discriminator),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }

    pub(crate) fn accumulate(&mut self, o: &LossTerms) {
        self.total += o.total;
        self.reconstruction += o.reconstruction;
        self.kl += o.kl;
        self.regularizer += o.regularizer;
        self.supervised += o.supervised;
        self.bbox += o.bbox;
        self.discriminator += o.discriminator;
    }

    pub(crate) fn scaled(&self, s: f64) -> LossTerms {
        LossTerms {
            total: self.total * s,
            reconstruction: self.reconstruction * s,
            kl: self.kl * s,
            regularizer: self.regularizer * s,
            supervised: self.supervised * s,
            bbox: self.bbox * s,
            discriminator: self.discriminator * s,
        }
    }
}

pub struct Vae {
    pub arch: Architecture,
    pub dtype: DType,
    store: ParamStore,
    encoder: Vec<Dense>,
    decoder: Vec<Dense>,
    heads: Vec<Dense>,
    disc: Vec<Dense>,
}

const INFERENCE_CHUNK: usize = 256;

impl Vae {
    pub fn new(arch: Architecture, seed: u64, dtype: DType) -> Result<Self> {
        let v = arch.variant;
        if arch.latent_dim == 0 || arch.hidden.is_empty() {
            return Err(NnError::Config("latent_dim and hidden sizes must be positive".into()));
        }
        if v.supervised && arch.cardinalities.len() > arch.latent_dim {
            return Err(NnError::Config(format!(
                "{} factors cannot be supervised on {} latents",
                arch.cardinalities.len(),
                arch.latent_dim
            )));
        }
        if v.supervised && arch.cardinalities.is_empty() {
            return Err(NnError::Config("supervised variants need factor cardinalities".into()));
        }
        let mut rng = seeded(seed);
        let mut store = ParamStore::new();
        let d = arch.geometry.pooled_len();
        let m = arch.latent_dim;

        let mut encoder = Vec::new();
        let mut fan_in = d;
        for (i, &h) in arch.hidden.iter().enumerate() {
            encoder.push(Dense::new(&mut store, &format!("enc.{i}"), fan_in, h, &mut rng, dtype)?);
            fan_in = h;
        }
        encoder.push(Dense::new(&mut store, "enc.out", fan_in, 2 * m, &mut rng, dtype)?);

        let mut decoder = Vec::new();
        let mut fan_in = m;
        for (i, &h) in arch.hidden.iter().rev().enumerate() {
            decoder.push(Dense::new(&mut store, &format!("dec.{i}"), fan_in, h, &mut rng, dtype)?);
            fan_in = h;
        }
        decoder.push(Dense::new(&mut store, "dec.out", fan_in, d, &mut rng, dtype)?);

        let heads = if v.supervised {
            arch.cardinalities
                .iter()
                .enumerate()
                .map(|(i, &k)| Dense::new(&mut store, &format!("head.{i}"), 1, k, &mut rng, dtype))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let disc = if v.base == BaseVariant::FactorVae {
            let h = arch.disc_hidden;
            vec![
                Dense::new(&mut store, "disc.0", m, h, &mut rng, dtype)?,
                Dense::new(&mut store, "disc.1", h, h, &mut rng, dtype)?,
                Dense::new(&mut store, "disc.2", h, 2, &mut rng, dtype)?,
            ]
        } else {
            Vec::new()
        };
        Ok(Self {
            arch,
            dtype,
            store,
            encoder,
            decoder,
            heads,
            disc,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    /// Model variables (everything but the discriminator).
    pub fn model_vars(&self) -> Vec<(String, candle_core::Var)> {
        self.store.subset(&["enc.", "dec.", "head."])
    }

    pub fn discriminator_vars(&self) -> Vec<(String, candle_core::Var)> {
        self.store.subset(&["disc."])
    }

    /// Posterior mean and log-variance for pooled inputs (B × d).
    pub fn encode_tensor(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut h = x.clone();
        let last = self.encoder.len() - 1;
        for (i, layer) in self.encoder.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last {
                h = h.relu()?;
            }
        }
        let m = self.arch.latent_dim;
        Ok((h.narrow(1, 0, m)?.contiguous()?, h.narrow(1, m, m)?.contiguous()?))
    }

    /// Bernoulli logits at pooled resolution (B × d).
    pub fn decode_logits(&self, z: &Tensor) -> Result<Tensor> {
        let mut h = z.clone();
        let last = self.decoder.len() - 1;
        for (i, layer) in self.decoder.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last {
                h = h.relu()?;
            }
        }
        Ok(h)
    }

    /// Discriminator logits (B × 2); class 0 means "drawn from q(z)".
    pub fn discriminate(&self, z: &Tensor) -> Result<Tensor> {
        if self.disc.is_empty() {
            return Err(NnError::Config(format!("variant {} has no discriminator", self.arch.variant)));
        }
        let mut h = z.clone();
        for (i, layer) in self.disc.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.disc.len() {
                h = h.relu()?;
            }
        }
        Ok(h)
    }

    /// Per-factor head logits from the posterior means of the given rows.
    pub fn head_logits(&self, mu: &Tensor) -> Result<Vec<Tensor>> {
        self.heads
            .iter()
            .enumerate()
            .map(|(i, h)| h.forward(&mu.narrow(1, i, 1)?))
            .collect()
    }

    fn pooled_tensor(&self, batch: &ImageBatch) -> Result<Tensor> {
        let x = self.arch.geometry.pool_batch(batch)?;
        Ok(Tensor::from_vec(x, (batch.len, self.arch.geometry.pooled_len()), &Device::Cpu)?.to_dtype(self.dtype)?)
    }

    fn to_array(&self, t: &Tensor) -> Result<Array2<f64>> {
        let (r, c) = t.dims2()?;
        let v = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        Ok(Array2::from_shape_vec((r, c), v).expect("shape from tensor"))
    }

    /// Encodes native-resolution images; `eps` (B × m) drives the sample.
    pub fn encode(&self, images: &ImageBatch, eps: ArrayView2<f64>) -> Result<Vec<LatentCode>> {
        let m = self.arch.latent_dim;
        if eps.dim() != (images.len, m) {
            return Err(cdbench_core::Error::ShapeMismatch {
                expected: format!("{}×{m} noise", images.len),
                got: format!("{}×{}", eps.nrows(), eps.ncols()),
            }
            .into());
        }
        let (mu, lv) = self.encode_arrays(images)?;
        Ok((0..images.len)
            .map(|n| {
                let mean = mu.row(n).to_vec();
                let log_variance = lv.row(n).to_vec();
                let sample = (0..m)
                    .map(|j| mean[j] + (0.5 * log_variance[j]).exp() * eps[[n, j]])
                    .collect();
                LatentCode {
                    mean,
                    log_variance,
                    sample,
                }
            })
            .collect())
    }

    fn encode_arrays(&self, images: &ImageBatch) -> Result<(Array2<f64>, Array2<f64>)> {
        let m = self.arch.latent_dim;
        let mut mu = Array2::zeros((images.len, m));
        let mut lv = Array2::zeros((images.len, m));
        let idx: Vec<usize> = (0..images.len).collect();
        for chunk in idx.chunks(INFERENCE_CHUNK) {
            let part = images.select(chunk);
            let (a, b) = self.encode_tensor(&self.pooled_tensor(&part)?)?;
            let (a, b) = (self.to_array(&a)?, self.to_array(&b)?);
            for (k, &n) in chunk.iter().enumerate() {
                mu.row_mut(n).assign(&a.row(k));
                lv.row_mut(n).assign(&b.row(k));
            }
        }
        Ok((mu, lv))
    }

    /// Posterior means (L × m).
    pub fn encode_means(&self, images: &ImageBatch) -> Result<Array2<f64>> {
        Ok(self.encode_arrays(images)?.0)
    }

    /// Posterior means of already pooled rows (L × d).
    pub fn encode_means_pooled(&self, pooled: &[f32], len: usize) -> Result<Array2<f64>> {
        let d = self.arch.geometry.pooled_len();
        let mut out = Array2::zeros((len, self.arch.latent_dim));
        for start in (0..len).step_by(INFERENCE_CHUNK) {
            let n = INFERENCE_CHUNK.min(len - start);
            let x = Tensor::from_slice(&pooled[start * d..(start + n) * d], (n, d), &Device::Cpu)?.to_dtype(self.dtype)?;
            let mu = self.to_array(&self.encode_tensor(&x)?.0)?;
            out.slice_mut(ndarray::s![start..start + n, ..]).assign(&mu);
        }
        Ok(out)
    }

    /// Pooled-resolution pixel means for latent rows.
    pub fn decode_pooled(&self, z: ArrayView2<f64>) -> Result<Vec<f32>> {
        let (b, m) = z.dim();
        if m != self.arch.latent_dim {
            return Err(cdbench_core::Error::ShapeMismatch {
                expected: format!("{} latent dims", self.arch.latent_dim),
                got: m.to_string(),
            }
            .into());
        }
        let mut out = Vec::with_capacity(b * self.arch.geometry.pooled_len());
        for start in (0..b).step_by(INFERENCE_CHUNK) {
            let n = INFERENCE_CHUNK.min(b - start);
            let rows: Vec<f64> = z.slice(ndarray::s![start..start + n, ..]).iter().copied().collect();
            let zt = Tensor::from_vec(rows, (n, m), &Device::Cpu)?.to_dtype(self.dtype)?;
            let y = candle_nn::ops::sigmoid(&self.decode_logits(&zt)?)?;
            out.extend(y.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?);
        }
        Ok(out)
    }

    /// Native-resolution reconstructions from the posterior means.
    pub fn reconstruct(&self, images: &ImageBatch) -> Result<ImageBatch> {
        let mu = self.encode_means(images)?;
        self.generate_images(mu.view())
    }

    pub fn generate_images(&self, z: ArrayView2<f64>) -> Result<ImageBatch> {
        let pooled = self.decode_pooled(z)?;
        self.arch.geometry.upsample(&pooled, z.nrows())
    }

    /// Full training objective for one minibatch.
    pub fn loss(&self, mb: &Minibatch, w: &LossWeights) -> Result<LossOutput> {
        let v = self.arch.variant;
        let (mu, logvar) = self.encode_tensor(&mb.x)?;
        let z = (&mu + (logvar.affine(0.5, 0.0)?.exp()? * &mb.eps)?)?;
        let logits = self.decode_logits(&z)?;
        let k2 = (self.arch.geometry.pool * self.arch.geometry.pool) as f64;
        let recon = losses::bernoulli_recon(&logits, &mb.x, k2)?;
        let kl = losses::kl_normal(&mu, &logvar)?;
        let mut terms = LossTerms {
            reconstruction: losses::scalar(&recon)?,
            kl: losses::scalar(&kl)?,
            ..Default::default()
        };
        let mut total = match v.base {
            BaseVariant::BetaVae => (&recon + (&kl * w.beta)?)?,
            BaseVariant::BetaTcVae => {
                let tc = losses::total_correlation(&z, &mu, &logvar, mb.dataset_size)?;
                terms.regularizer = losses::scalar(&tc)?;
                ((&recon + &kl)? + (tc * (w.beta - 1.0))?)?
            }
            BaseVariant::DipVaeI => {
                let p = losses::dip_i_penalty(&mu, w.lambda_od, w.lambda_d)?;
                terms.regularizer = losses::scalar(&p)?;
                ((&recon + &kl)? + p)?
            }
            BaseVariant::FactorVae => {
                let d = self.discriminate(&z)?;
                let tc = (d.narrow(1, 0, 1)? - d.narrow(1, 1, 1)?)?.mean_all()?;
                terms.regularizer = losses::scalar(&tc)?;
                ((&recon + &kl)? + (tc * w.gamma)?)?
            }
        };
        if v.supervised {
            if let Some((rows, targets)) = &mb.labeled_rows {
                let mu_l = mu.index_select(rows, 0)?;
                let mut sup = Tensor::zeros((), self.dtype, &Device::Cpu)?;
                for (logit, t) in self.head_logits(&mu_l)?.iter().zip(targets) {
                    sup = (sup + losses::cross_entropy(logit, t)?)?;
                }
                terms.supervised = losses::scalar(&sup)?;
                total = (total + (sup * w.supervised_weight)?)?;
            }
        }
        if v.bbox {
            let (c, s, q) = mb
                .masks
                .as_ref()
                .ok_or_else(|| NnError::Config("ss-fvae-bb needs bounding-box masks for every record".into()))?;
            let y = candle_nn::ops::sigmoid(&logits)?;
            let bb = losses::bb_penalty_pooled(&y, c, s, q)?;
            terms.bbox = losses::scalar(&bb)?;
            total = (total + (bb * w.lambda_bb)?)?;
        }
        terms.total = losses::scalar(&total)?;
        Ok(LossOutput { total, terms, z })
    }

    /// Discriminator cross-entropy on `z` (class 0) against `z` with each
    /// dimension independently shuffled across the batch (class 1).
    pub fn discriminator_loss(&self, z: &Tensor, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let z = z.detach();
        let (b, m) = z.dims2()?;
        let host = z.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        let mut perm = vec![0.0; b * m];
        let mut order: Vec<usize> = (0..b).collect();
        for j in 0..m {
            order.shuffle(rng);
            for (i, &src) in order.iter().enumerate() {
                perm[i * m + j] = host[src * m + j];
            }
        }
        let zp = Tensor::from_vec(perm, (b, m), &Device::Cpu)?.to_dtype(self.dtype)?;
        let zeros = Tensor::zeros(b, DType::U32, &Device::Cpu)?;
        let ones = Tensor::ones(b, DType::U32, &Device::Cpu)?;
        let a = losses::cross_entropy(&self.discriminate(&z)?, &zeros)?;
        let c = losses::cross_entropy(&self.discriminate(&zp)?, &ones)?;
        Ok(((a + c)? * 0.5)?)
    }

    /// Probability that each row of `z` was drawn jointly (class 0).
    pub fn discriminator_probabilities(&self, z: &Tensor) -> Result<Array2<f64>> {
        let p = candle_nn::ops::softmax(&self.discriminate(z)?, candle_core::D::Minus1)?;
        self.to_array(&p)
    }
}

impl LatentGenerator for Vae {
    fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    fn generate(&self, z: ArrayView2<f64>) -> cdbench_core::Result<ImageBatch> {
        Ok(self.generate_images(z)?)
    }
}

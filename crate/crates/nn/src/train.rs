//! Training loop, configuration presets and model checkpoints.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use cdbench_core::datagen::RendererKind;
use cdbench_core::scm::derive_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adam::{Adam, AdamConfig};
use crate::checkpoint::{Checkpoint, TensorMap};
use crate::data::TrainingSet;
use crate::error::{NnError, Result};
use crate::vae::{Architecture, BaseVariant, LossTerms, LossWeights, Minibatch, Vae, VariantSpec};

pub const MODEL_KIND: &str = "cdbench-vae";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: VariantSpec,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_disc_hidden")]
    pub disc_hidden: usize,
    pub beta: f64,
    pub gamma: f64,
    pub lambda_d: f64,
    pub lambda_od: f64,
    #[serde(default = "default_sup_weight")]
    pub supervised_weight: f64,
    #[serde(default = "default_sup_fraction")]
    pub supervision_fraction: f64,
    #[serde(default = "default_lambda_bb")]
    pub lambda_bb: f64,
    pub epochs: usize,
    /// Total optimizer steps; overrides `epochs` when set.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_disc_lr")]
    pub disc_lr: f64,
    #[serde(default)]
    pub seed: u64,
    /// Epochs after which an extra `epoch-<n>.ckpt` copy is kept.
    #[serde(default)]
    pub snapshot_epochs: Vec<usize>,
}

fn default_batch() -> usize {
    64
}
fn default_latent() -> usize {
    64
}
fn default_hidden() -> Vec<usize> {
    vec![512, 256]
}
fn default_disc_hidden() -> usize {
    256
}
fn default_sup_weight() -> f64 {
    4.0
}
fn default_sup_fraction() -> f64 {
    0.10
}
fn default_lambda_bb() -> f64 {
    2.0
}
fn default_lr() -> f64 {
    1e-3
}
fn default_disc_lr() -> f64 {
    1e-4
}

impl TrainConfig {
    /// Per-dataset regularizer strengths: CANDLE-lite uses β = 10, γ = 4,
    /// λ_d = λ_od = 10; the sprite grid and the toy set use β = 4, γ = 6,
    /// λ_d = 100, λ_od = 10.
    pub fn preset(dataset: RendererKind, variant: VariantSpec, epochs: usize, seed: u64) -> Self {
        let (beta, gamma, lambda_d, lambda_od) = match dataset {
            RendererKind::CandleLite => (10.0, 4.0, 10.0, 10.0),
            RendererKind::Sprites | RendererKind::Toy => (4.0, 6.0, 100.0, 10.0),
        };
        Self {
            variant,
            batch_size: default_batch(),
            latent_dim: default_latent(),
            hidden: default_hidden(),
            disc_hidden: default_disc_hidden(),
            beta,
            gamma,
            lambda_d,
            lambda_od,
            supervised_weight: default_sup_weight(),
            supervision_fraction: default_sup_fraction(),
            lambda_bb: default_lambda_bb(),
            epochs,
            steps: None,
            lr: default_lr(),
            disc_lr: default_disc_lr(),
            seed,
            snapshot_epochs: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("latent_dim", self.latent_dim as f64),
            ("disc_hidden", self.disc_hidden as f64),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda_d", self.lambda_d),
            ("lambda_od", self.lambda_od),
            ("supervised_weight", self.supervised_weight),
            ("lambda_bb", self.lambda_bb),
            ("lr", self.lr),
            ("disc_lr", self.disc_lr),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(NnError::Config(format!("`{name}` must be positive, got {v}")));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(NnError::Config("`hidden` must list positive layer widths".into()));
        }
        if !(0.0..=1.0).contains(&self.supervision_fraction) {
            return Err(NnError::Config("`supervision_fraction` must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            beta: self.beta,
            gamma: self.gamma,
            lambda_d: self.lambda_d,
            lambda_od: self.lambda_od,
            supervised_weight: self.supervised_weight,
            lambda_bb: self.lambda_bb,
        }
    }

    /// Hash of every setting that shapes the trajectory; the training length
    /// and snapshot list are excluded so runs can be extended by resuming.
    pub fn trajectory_hash(&self) -> String {
        let mut c = self.clone();
        c.epochs = 0;
        c.steps = None;
        c.snapshot_epochs.clear();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn total_steps(&self, dataset_len: usize) -> usize {
        self.steps
            .unwrap_or_else(|| self.epochs * steps_per_epoch(dataset_len, self.batch_size))
    }
}

pub fn effective_batch(dataset_len: usize, batch_size: usize) -> usize {
    batch_size.min(dataset_len).max(1)
}

pub fn steps_per_epoch(dataset_len: usize, batch_size: usize) -> usize {
    (dataset_len / effective_batch(dataset_len, batch_size)).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: usize,
    #[serde(flatten)]
    pub terms: LossTerms,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub variant: VariantSpec,
    pub config: TrainConfig,
    pub config_hash: String,
    pub seed: u64,
    pub arch: Architecture,
    pub step: usize,
    pub epoch: usize,
    pub dataset_hash: String,
    pub factor_names: Vec<String>,
}

/// A model together with its optimizer state.
pub struct TrainState {
    pub model: Vae,
    pub meta: ModelMeta,
    opt: Adam,
    disc_opt: Option<Adam>,
}

impl TrainState {
    pub fn init(cfg: &TrainConfig, data: &TrainingSet) -> Result<Self> {
        cfg.validate()?;
        let arch = Architecture {
            variant: cfg.variant,
            geometry: data.geometry,
            latent_dim: cfg.latent_dim,
            hidden: cfg.hidden.clone(),
            cardinalities: if cfg.variant.supervised {
                data.cardinalities.clone()
            } else {
                Vec::new()
            },
            disc_hidden: cfg.disc_hidden,
        };
        let model = Vae::new(arch.clone(), derive_seed(cfg.seed, 0), DType::F32)?;
        let opt = Adam::new(model.model_vars(), AdamConfig::with_lr(cfg.lr))?;
        let disc_opt = (cfg.variant.base == BaseVariant::FactorVae)
            .then(|| {
                let c = AdamConfig {
                    beta1: 0.5,
                    beta2: 0.9,
                    ..AdamConfig::with_lr(cfg.disc_lr)
                };
                Adam::new(model.discriminator_vars(), c)
            })
            .transpose()?;
        let meta = ModelMeta {
            variant: cfg.variant,
            config: cfg.clone(),
            config_hash: cfg.trajectory_hash(),
            seed: cfg.seed,
            arch,
            step: 0,
            epoch: 0,
            dataset_hash: data.dataset_hash.clone(),
            factor_names: data.factor_names.clone(),
        };
        Ok(Self {
            model,
            meta,
            opt,
            disc_opt,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors: TensorMap = self.model.params().export()?;
        tensors.extend(self.opt.export("opt."));
        if let Some(d) = &self.disc_opt {
            tensors.extend(d.export("disc_opt."));
        }
        Ok(Checkpoint {
            kind: MODEL_KIND.into(),
            meta: serde_json::to_value(&self.meta)?,
            tensors,
        })
    }

    /// Rebuilds model and optimizer state from a checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != MODEL_KIND {
            return Err(NnError::Checkpoint(format!("expected a model checkpoint, found `{}`", ck.kind)));
        }
        let meta: ModelMeta = serde_json::from_value(ck.meta.clone())?;
        let model = Vae::new(meta.arch.clone(), 0, DType::F32)?;
        model.params().import(&ck.tensors)?;
        let mut opt = Adam::new(model.model_vars(), AdamConfig::with_lr(meta.config.lr))?;
        opt.import("opt.", meta.step as u64, &ck.tensors)?;
        let disc_opt = if meta.arch.variant.base == BaseVariant::FactorVae {
            let c = AdamConfig {
                beta1: 0.5,
                beta2: 0.9,
                ..AdamConfig::with_lr(meta.config.disc_lr)
            };
            let mut d = Adam::new(model.discriminator_vars(), c)?;
            d.import("disc_opt.", meta.step as u64, &ck.tensors)?;
            Some(d)
        } else {
            None
        };
        Ok(Self {
            model,
            meta,
            opt,
            disc_opt,
        })
    }
}

/// Loads only the model from a checkpoint file.
pub fn load_model(path: &Path) -> Result<(Vae, ModelMeta)> {
    let st = TrainState::from_checkpoint(&Checkpoint::load(path)?)?;
    Ok((st.model, st.meta))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub model_hash: String,
    pub log: Vec<EpochLog>,
    pub final_loss: Option<f64>,
    pub resumed_from_step: usize,
}

fn minibatch(data: &TrainingSet, rows: &[usize], cfg: &TrainConfig, step: usize) -> Result<Minibatch> {
    let d = data.geometry.pooled_len();
    let b = rows.len();
    let dev = Device::Cpu;
    let mut x = Vec::with_capacity(b * d);
    for &r in rows {
        x.extend_from_slice(data.pooled(r));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(cfg.seed, 1), step as u64));
    let eps: Vec<f32> = (0..b * cfg.latent_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let labeled_rows = if cfg.variant.supervised {
        let pos: Vec<u32> = rows
            .iter()
            .enumerate()
            .filter(|(_, &r)| data.labeled[r])
            .map(|(i, _)| i as u32)
            .collect();
        if pos.is_empty() {
            None
        } else {
            let targets = (0..data.cardinalities.len())
                .map(|f| {
                    let t: Vec<u32> = pos.iter().map(|&i| data.labels[rows[i as usize]][f] as u32).collect();
                    Tensor::from_vec(t, pos.len(), &dev)
                })
                .collect::<candle_core::Result<Vec<_>>>()?;
            Some((Tensor::from_vec(pos.clone(), pos.len(), &dev)?, targets))
        }
    } else {
        None
    };
    let masks = match (&data.masks, cfg.variant.bbox) {
        (Some(m), true) => {
            let gather = |src: &[f32]| -> candle_core::Result<Tensor> {
                let mut v = Vec::with_capacity(b * d);
                for &r in rows {
                    v.extend_from_slice(&src[r * d..(r + 1) * d]);
                }
                Tensor::from_vec(v, (b, d), &dev)
            };
            Some((gather(&m.count)?, gather(&m.sum)?, gather(&m.sum_sq)?))
        }
        _ => None,
    };
    Ok(Minibatch {
        x: Tensor::from_vec(x, (b, d), &dev)?,
        eps: Tensor::from_vec(eps, (b, cfg.latent_dim), &dev)?,
        labeled_rows,
        masks,
        dataset_size: data.len,
    })
}

/// Drops log entries written after the checkpoint being resumed.
fn trim_log(path: &Path, step: usize) -> Result<()> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(());
    };
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| serde_json::from_str::<EpochLog>(l).is_ok_and(|e| e.step <= step))
        .collect();
    if kept.len() != text.lines().count() {
        let mut out = kept.join("\n");
        if !out.is_empty() {
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| NnError::io(path, e))?;
    }
    Ok(())
}

/// Minimum optimizer steps between two intermediate checkpoint writes.
pub const CHECKPOINT_INTERVAL_STEPS: usize = 200;

/// Trains (or resumes) a model in `out_dir`.
///
/// The checkpoint `model.ckpt` is rewritten at epoch boundaries at least
/// [`CHECKPOINT_INTERVAL_STEPS`] optimizer steps apart and at the end of the
/// run; an existing checkpoint with the same trajectory hash is resumed. A
/// non-finite loss aborts the run and leaves the last good checkpoint in place.
pub fn train(cfg: &TrainConfig, data: &TrainingSet, out_dir: &Path) -> Result<TrainOutcome> {
    train_with_progress(cfg, data, out_dir, |_| {})
}

pub fn train_with_progress(
    cfg: &TrainConfig,
    data: &TrainingSet,
    out_dir: &Path,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.len == 0 {
        return Err(cdbench_core::Error::InsufficientData("empty training set".into()).into());
    }
    if cfg.variant.bbox && data.masks.is_none() {
        return Err(NnError::Config(
            "ss-fvae-bb requires bounding-box metadata for every record".into(),
        ));
    }
    let data_owned;
    let data = if cfg.variant.supervised && (cfg.supervision_fraction - 0.10).abs() > 1e-12 {
        data_owned = data.clone().with_supervision_fraction(cfg.supervision_fraction, derive_seed(cfg.seed, 2));
        &data_owned
    } else {
        data
    };
    fs::create_dir_all(out_dir).map_err(|e| NnError::io(out_dir, e))?;
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(LOG_FILE);

    let mut state = match ckpt_path.exists() {
        true => {
            let st = TrainState::from_checkpoint(&Checkpoint::load(&ckpt_path)?)?;
            if st.meta.config_hash != cfg.trajectory_hash() || st.meta.dataset_hash != data.dataset_hash {
                return Err(NnError::Checkpoint(format!(
                    "{} was produced by a different configuration or dataset",
                    ckpt_path.display()
                )));
            }
            st
        }
        false => {
            let st = TrainState::init(cfg, data)?;
            st.to_checkpoint()?.save(&ckpt_path)?;
            let _ = fs::remove_file(&log_path);
            st
        }
    };
    state.meta.config = cfg.clone();
    let resumed_from_step = state.meta.step;
    trim_log(&log_path, resumed_from_step)?;
    let mut saved_step = state.meta.step;

    let batch = effective_batch(data.len, cfg.batch_size);
    let spe = steps_per_epoch(data.len, cfg.batch_size);
    let total = cfg.total_steps(data.len);
    let weights = cfg.weights();
    let mut log = Vec::new();
    let mut logf = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| NnError::io(&log_path, e))?;

    let mut acc = LossTerms::default();
    let mut acc_n = 0usize;
    let mut t0 = Instant::now();
    let mut final_loss = None;
    let mut order: Vec<usize> = Vec::new();
    while state.meta.step < total {
        let step = state.meta.step;
        let epoch = step / spe;
        let within = step % spe;
        if within == 0 || order.is_empty() {
            order = (0..data.len).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1000 + epoch as u64)));
        }
        let rows = &order[within * batch..(within + 1) * batch];
        let mb = minibatch(data, rows, cfg, step)?;
        let out = state.model.loss(&mb, &weights)?;
        let mut terms = out.terms;
        if let Some(bad) = terms.first_non_finite() {
            return Err(NnError::NonFinite {
                step,
                term: bad.to_string(),
            });
        }
        let grads = out.total.backward()?;
        state.opt.step(&grads)?;
        if let Some(dopt) = state.disc_opt.as_mut() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(cfg.seed, 3), step as u64));
            let dl = state.model.discriminator_loss(&out.z, &mut rng)?;
            terms.discriminator = crate::losses::scalar(&dl)?;
            if !terms.discriminator.is_finite() {
                return Err(NnError::NonFinite {
                    step,
                    term: "discriminator".into(),
                });
            }
            dopt.step(&dl.backward()?)?;
        }
        final_loss = Some(terms.total);
        acc.accumulate(&terms);
        acc_n += 1;
        state.meta.step += 1;

        let done = state.meta.step;
        if done % spe == 0 || done == total {
            state.meta.epoch = done.div_ceil(spe);
            let entry = EpochLog {
                epoch: state.meta.epoch,
                step: done,
                terms: acc.scaled(1.0 / acc_n as f64),
                seconds: t0.elapsed().as_secs_f64(),
            };
            writeln!(logf, "{}", serde_json::to_string(&entry)?).map_err(|e| NnError::io(&log_path, e))?;
            progress(&entry);
            log.push(entry);
            acc = LossTerms::default();
            acc_n = 0;
            t0 = Instant::now();
            let snapshot = done % spe == 0 && cfg.snapshot_epochs.contains(&state.meta.epoch);
            if snapshot || done == total || done - saved_step >= CHECKPOINT_INTERVAL_STEPS {
                let ck = state.to_checkpoint()?;
                ck.save(&ckpt_path)?;
                saved_step = done;
                if snapshot {
                    ck.save(&out_dir.join(format!("epoch-{}.ckpt", state.meta.epoch)))?;
                }
            }
        }
    }
    // A zero-length run still publishes the (unchanged) checkpoint.
    if total == state.meta.step && log.is_empty() && !ckpt_path.exists() {
        state.to_checkpoint()?.save(&ckpt_path)?;
    }
    Ok(TrainOutcome {
        model_hash: crate::checkpoint::file_hash(&ckpt_path)?,
        checkpoint: ckpt_path,
        log,
        final_loss,
        resumed_from_step,
    })
}

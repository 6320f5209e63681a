//! Factor oracle: three strided conv+ReLU stages and one linear layer whose
//! outputs are split into per-factor softmax heads.

use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use cdbench_core::datagen::DatasetManifest;
use cdbench_core::metrics::FactorClassifier;
use cdbench_core::scm::{derive_seed, CausalGraphSpec, FactorSpec};
use cdbench_core::ImageBatch;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::checkpoint::Checkpoint;
use crate::data::{Geometry, TrainingSet};
use crate::error::{NnError, Result};
use crate::losses::cross_entropy;
use crate::params::{seeded, Conv3, Dense, ParamStore};

pub const CLASSIFIER_KIND: &str = "cdbench-classifier";
const CHANNELS: [usize; 3] = [32, 64, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of records held out for the accuracy report.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 64,
            lr: 2e-3,
            holdout: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierMeta {
    pub factors: Vec<FactorSpec>,
    pub schema_hash: String,
    pub geometry: Geometry,
    pub accuracy: Vec<f64>,
    pub config: ClassifierConfig,
    pub split_seed: u64,
    pub dataset_hash: String,
    pub train_records: usize,
    pub holdout_records: usize,
}

pub struct Classifier {
    pub meta: ClassifierMeta,
    store: ParamStore,
    convs: Vec<Conv3>,
    fc: Dense,
}

fn conv_out(n: usize) -> usize {
    (n - 1) / 2 + 1
}

impl Classifier {
    fn build(meta: ClassifierMeta, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let mut store = ParamStore::new();
        let g = meta.geometry;
        let mut convs = Vec::new();
        let (mut c, mut h, mut w) = (g.channels, g.pooled_height(), g.pooled_width());
        for (i, &co) in CHANNELS.iter().enumerate() {
            convs.push(Conv3::new(&mut store, &format!("conv.{i}"), c, co, 2, &mut rng, DType::F32)?);
            c = co;
            h = conv_out(h);
            w = conv_out(w);
        }
        let width: usize = meta.factors.iter().map(FactorSpec::cardinality).sum();
        let fc = Dense::new(&mut store, "fc", c * h * w, width, &mut rng, DType::F32)?;
        Ok(Self {
            meta,
            store,
            convs,
            fc,
        })
    }

    /// Total number of output units (Σ cardinalities).
    pub fn output_width(&self) -> usize {
        self.fc.b.dims()[0]
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = ((x - 0.5)? * 4.0)?;
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?;
        }
        self.fc.forward(&h.flatten_from(1)?)
    }

    fn pooled_input(&self, pooled: Vec<f32>, len: usize) -> Result<Tensor> {
        let g = self.meta.geometry;
        Ok(Tensor::from_vec(pooled, (len, g.channels, g.pooled_height(), g.pooled_width()), &Device::Cpu)?)
    }

    fn heads(&self, logits: &Tensor) -> Result<Vec<Tensor>> {
        let mut off = 0;
        let mut out = Vec::new();
        for f in &self.meta.factors {
            let k = f.cardinality();
            out.push(logits.narrow(1, off, k)?);
            off += k;
        }
        Ok(out)
    }

    fn probabilities(&self, pooled: Vec<f32>, len: usize) -> Result<Vec<Array2<f64>>> {
        let logits = self.logits(&self.pooled_input(pooled, len)?)?;
        self.heads(&logits)?
            .iter()
            .map(|h| {
                let p = candle_nn::ops::softmax(&h.to_dtype(DType::F64)?, D::Minus1)?;
                let (r, c) = p.dims2()?;
                Ok(Array2::from_shape_vec((r, c), p.flatten_all()?.to_vec1::<f64>()?).expect("softmax shape"))
            })
            .collect()
    }

    /// Per-factor probabilities for native-resolution images.
    pub fn predict(&self, images: &ImageBatch) -> Result<Vec<Array2<f64>>> {
        let g = self.meta.geometry;
        g.check_batch(images)?;
        let n = self.meta.factors.len();
        let mut parts: Vec<Vec<Array2<f64>>> = vec![Vec::new(); n];
        let idx: Vec<usize> = (0..images.len).collect();
        for chunk in idx.chunks(256) {
            let pooled = g.pool_batch(&images.select(chunk))?;
            for (i, p) in self.probabilities(pooled, chunk.len())?.into_iter().enumerate() {
                parts[i].push(p);
            }
        }
        Ok(parts
            .into_iter()
            .zip(&self.meta.factors)
            .map(|(ps, f)| {
                if ps.is_empty() {
                    return Array2::zeros((0, f.cardinality()));
                }
                let views: Vec<_> = ps.iter().map(|p| p.view()).collect();
                ndarray::concatenate(ndarray::Axis(0), &views).expect("same widths")
            })
            .collect())
    }

    /// Like [`Classifier::predict`], refusing images from a differently-shaped schema.
    pub fn predict_for(&self, graph: &CausalGraphSpec, images: &ImageBatch) -> Result<Vec<Array2<f64>>> {
        self.check_schema(graph)?;
        self.predict(images)
    }

    pub fn check_schema(&self, graph: &CausalGraphSpec) -> Result<()> {
        if graph.schema_hash() != self.meta.schema_hash {
            return Err(cdbench_core::Error::Schema(
                "classifier was trained on a different factor schema".into(),
            )
            .into());
        }
        Ok(())
    }

    /// Argmax accuracy per factor on pooled rows.
    fn accuracy_on(&self, data: &TrainingSet, rows: &[usize]) -> Result<Vec<f64>> {
        let n = self.meta.factors.len();
        let mut correct = vec![0usize; n];
        for chunk in rows.chunks(256) {
            let mut pooled = Vec::with_capacity(chunk.len() * data.geometry.pooled_len());
            for &r in chunk {
                pooled.extend_from_slice(data.pooled(r));
            }
            let probs = self.probabilities(pooled, chunk.len())?;
            for (f, p) in probs.iter().enumerate() {
                for (k, &r) in chunk.iter().enumerate() {
                    let row = p.row(k);
                    let arg = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                    if arg == data.labels[r][f] {
                        correct[f] += 1;
                    }
                }
            }
        }
        Ok(correct.iter().map(|&c| c as f64 / rows.len().max(1) as f64).collect())
    }

    /// Accuracy of every factor over a whole manifest.
    pub fn evaluate(&self, manifest: &DatasetManifest) -> Result<Vec<f64>> {
        self.check_schema(&manifest.graph)?;
        let data = TrainingSet::from_manifest(manifest, false)?;
        let rows: Vec<usize> = (0..data.len).collect();
        self.accuracy_on(&data, &rows)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            kind: CLASSIFIER_KIND.into(),
            meta: serde_json::to_value(&self.meta)?,
            tensors: self.store.export()?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        self.to_checkpoint()?.save(path)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CLASSIFIER_KIND {
            return Err(NnError::Checkpoint(format!("expected a classifier checkpoint, found `{}`", ck.kind)));
        }
        let meta: ClassifierMeta = serde_json::from_value(ck.meta.clone())?;
        let c = Self::build(meta, 0)?;
        c.store.import(&ck.tensors)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl FactorClassifier for Classifier {
    fn factor_names(&self) -> Vec<String> {
        self.meta.factors.iter().map(|f| f.name.clone()).collect()
    }

    fn cardinalities(&self) -> Vec<usize> {
        self.meta.factors.iter().map(FactorSpec::cardinality).collect()
    }

    fn predict_proba(&self, images: &ImageBatch) -> cdbench_core::Result<Vec<Array2<f64>>> {
        Ok(self.predict(images)?)
    }

    fn validation_accuracy(&self) -> Vec<f64> {
        self.meta.accuracy.clone()
    }
}

/// Seeded split of `0..len` into (train, held-out) index lists.
pub fn split_indices(len: usize, holdout: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_hold = ((len as f64) * holdout).round() as usize;
    let mut hold = idx.split_off(len - n_hold.min(len));
    idx.sort_unstable();
    hold.sort_unstable();
    (idx, hold)
}

pub fn train_classifier(manifest: &DatasetManifest, split_seed: u64, cfg: &ClassifierConfig) -> Result<Classifier> {
    let data = TrainingSet::from_manifest(manifest, false)?;
    train_classifier_on(&data, &manifest.graph, split_seed, cfg)
}

/// Trains on the non-held-out records and reports held-out accuracy per factor.
pub fn train_classifier_on(
    data: &TrainingSet,
    graph: &CausalGraphSpec,
    split_seed: u64,
    cfg: &ClassifierConfig,
) -> Result<Classifier> {
    if data.factor_names != graph.factor_names() {
        return Err(cdbench_core::Error::Schema("training set factors differ from the graph".into()).into());
    }
    if !(0.0..1.0).contains(&cfg.holdout) || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(NnError::Config("classifier needs holdout in [0, 1) and positive batch size and lr".into()));
    }
    let (train_rows, hold_rows) = split_indices(data.len, cfg.holdout, split_seed);
    if train_rows.is_empty() {
        return Err(cdbench_core::Error::InsufficientData("no training records after the split".into()).into());
    }
    for (f, spec) in graph.factors.iter().enumerate() {
        let first = data.labels[train_rows[0]][f];
        if train_rows.iter().all(|&r| data.labels[r][f] == first) {
            return Err(cdbench_core::Error::UndefinedFactor(spec.name.clone()).into());
        }
    }
    let meta = ClassifierMeta {
        factors: graph.factors.clone(),
        schema_hash: graph.schema_hash(),
        geometry: data.geometry,
        accuracy: Vec::new(),
        config: cfg.clone(),
        split_seed,
        dataset_hash: data.dataset_hash.clone(),
        train_records: train_rows.len(),
        holdout_records: hold_rows.len(),
    };
    let mut clf = Classifier::build(meta, derive_seed(cfg.seed, 0))?;
    let vars = clf.store.subset(&[""]);
    let mut opt = Adam::new(vars, AdamConfig::with_lr(cfg.lr))?;
    let d = data.geometry.pooled_len();
    let batch = cfg.batch_size.min(train_rows.len());
    let n = graph.factors.len();
    for epoch in 0..cfg.epochs {
        let mut order = train_rows.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1 + epoch as u64)));
        for rows in order.chunks(batch) {
            let mut x = Vec::with_capacity(rows.len() * d);
            for &r in rows {
                x.extend_from_slice(data.pooled(r));
            }
            let logits = clf.logits(&clf.pooled_input(x, rows.len())?)?;
            let mut loss = Tensor::zeros((), DType::F32, &Device::Cpu)?;
            for (f, head) in clf.heads(&logits)?.iter().enumerate() {
                let t: Vec<u32> = rows.iter().map(|&r| data.labels[r][f] as u32).collect();
                let t = Tensor::from_vec(t, rows.len(), &Device::Cpu)?;
                loss = (loss + cross_entropy(head, &t)?)?;
            }
            let loss = (loss / n as f64)?;
            opt.step(&loss.backward()?)?;
        }
    }
    let eval_rows = if hold_rows.is_empty() { &train_rows } else { &hold_rows };
    clf.meta.accuracy = clf.accuracy_on(data, eval_rows)?;
    Ok(clf)
}

//! Cached experiment stages: dataset → oracle → models → reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cdbench_core::datagen::{apply_confounded_filter, generate_dataset, Conditioning, DatasetManifest, RenderSettings, MANIFEST_FILE};
use cdbench_core::metrics::export::{read_labels, read_latents, write_labels, write_latents};
use cdbench_core::metrics::{
    compute_cg_on, compute_dci_d, compute_irs, compute_uc, FactorClassifier, LatentGenerator, MetricReport, Provenance,
};
use cdbench_core::scm::CausalGraphSpec;
use cdbench_nn::checkpoint::file_hash;
use cdbench_nn::classifier::train_classifier_on;
use cdbench_nn::train::{load_model, train_with_progress, CHECKPOINT_FILE};
use cdbench_nn::{Classifier, ClassifierConfig, TrainConfig, TrainingSet, Vae};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cache::{stage_key, Cache, Stage};
use crate::config::{CgSection, ExperimentConfig, MetricKind};
use crate::error::{HarnessError, Result};

pub const CLASSIFIER_FILE: &str = "classifier.ckpt";
pub const REPORT_FILE: &str = "report.json";
pub const LATENTS_FILE: &str = "latents.bin";
pub const LABELS_FILE: &str = "labels.csv";

/// A manifest on disk together with its content hash.
#[derive(Debug, Clone)]
pub struct DatasetHandle {
    pub manifest: DatasetManifest,
    pub path: PathBuf,
    pub hash: String,
}

impl DatasetHandle {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(path)?;
        Ok(Self {
            hash: manifest.hash(),
            manifest,
            path: path.to_path_buf(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ModelHandle {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub hash: String,
}

impl ModelHandle {
    pub fn from_checkpoint(checkpoint: &Path) -> Result<Self> {
        Ok(Self {
            dir: checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
            checkpoint: checkpoint.to_path_buf(),
            hash: file_hash(checkpoint)?,
        })
    }

    /// The copy kept after `epoch`, if the run asked for one.
    pub fn snapshot(&self, epoch: usize) -> Result<Option<ModelHandle>> {
        let p = self.dir.join(format!("epoch-{epoch}.ckpt"));
        p.exists().then(|| Self::from_checkpoint(&p)).transpose()
    }
}

pub struct OracleHandle {
    pub classifier: Classifier,
    pub path: PathBuf,
    pub hash: String,
}

/// What a report is computed from besides the model and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub metrics: Vec<MetricKind>,
    pub rhos: Vec<usize>,
    pub cg: CgSection,
    /// Seed for the CG record subsample.
    pub subsample_seed: u64,
}

impl EvalOptions {
    pub fn wants(&self, m: MetricKind) -> bool {
        self.metrics.contains(&m)
    }
}

/// Scores of one set of latent codes.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub irs: f64,
    pub dci_d: Option<f64>,
    pub uc: BTreeMap<usize, f64>,
    pub cg: BTreeMap<usize, f64>,
    pub maps: BTreeMap<usize, Vec<Vec<usize>>>,
}

pub fn label_array(labels: &[Vec<usize>]) -> Array2<usize> {
    let n = labels.first().map_or(0, Vec::len);
    Array2::from_shape_fn((labels.len(), n), |(r, c)| labels[r][c])
}

fn cg_rows(len: usize, opts: &EvalOptions) -> Vec<usize> {
    match opts.cg.max_records {
        Some(n) if n < len => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.subsample_seed);
            let mut rows = rand::seq::index::sample(&mut rng, len, n).into_vec();
            rows.sort_unstable();
            rows
        }
        _ => (0..len).collect(),
    }
}

/// IRS attribution, then UC and CG per ρ and optionally DCI-D.
/// CG needs the generator and oracle that produced and score the codes.
pub fn score_codes(
    codes: &Array2<f64>,
    labels: &Array2<usize>,
    names: &[String],
    opts: &EvalOptions,
    cg_models: Option<(&dyn LatentGenerator, &dyn FactorClassifier)>,
) -> Result<Scores> {
    let (irs, map) = compute_irs(codes.view(), labels.view(), names, 1)?;
    let dci_d = opts
        .wants(MetricKind::DciD)
        .then(|| compute_dci_d(codes.view(), labels.view(), names))
        .transpose()?;
    let mut scores = Scores {
        irs,
        dci_d,
        uc: BTreeMap::new(),
        cg: BTreeMap::new(),
        maps: BTreeMap::new(),
    };
    let rows = cg_rows(codes.nrows(), opts);
    for &rho in &opts.rhos {
        let m = map.with_rho(rho)?;
        scores.maps.insert(rho, m.entries.iter().map(|s| s.iter().copied().collect()).collect());
        if opts.wants(MetricKind::Uc) {
            scores.uc.insert(rho, compute_uc(&m)?);
        }
        if opts.wants(MetricKind::Cg) {
            let (g, c) = cg_models
                .ok_or_else(|| HarnessError::Config("CG needs a generator and an oracle classifier".into()))?;
            let r = compute_cg_on(g, c, codes.view(), labels.view(), &m, &opts.cg.options(), &rows)?;
            scores.cg.insert(rho, r.cg);
        }
    }
    Ok(scores)
}

/// Encoder means for every record of a training set.
pub fn encode_dataset(model: &Vae, data: &TrainingSet) -> Result<Array2<f64>> {
    Ok(model.encode_means_pooled(&data.x, data.len)?)
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &Vae,
    model_hash: &str,
    oracle: Option<&OracleHandle>,
    dataset: &DatasetHandle,
    data: &TrainingSet,
    variant: &str,
    seed: u64,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    if let Some(o) = oracle {
        o.classifier.check_schema(&dataset.manifest.graph)?;
    }
    let codes = encode_dataset(model, data)?;
    let labels = label_array(&data.labels);
    let cg_models = oracle.map(|o| (model as &dyn LatentGenerator, &o.classifier as &dyn FactorClassifier));
    let s = score_codes(&codes, &labels, &data.factor_names, opts, cg_models)?;
    let report = MetricReport {
        variant: variant.to_string(),
        irs: s.irs,
        dci_d: s.dci_d,
        uc: s.uc,
        cg: s.cg,
        maps: s.maps,
        provenance: Provenance {
            model_hash: model_hash.to_string(),
            classifier_hash: oracle.map(|o| o.hash.clone()).unwrap_or_default(),
            dataset_hash: dataset.hash.clone(),
            seed,
        },
    };
    report.validate()?;
    Ok(report)
}

/// Writes the L × m encoder means and the aligned label table.
pub fn export_latents(model: &Vae, manifest: &DatasetManifest, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let data = TrainingSet::from_manifest(manifest, false)?;
    let codes = encode_dataset(model, &data)?;
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let lat = out_dir.join(LATENTS_FILE);
    let lab = out_dir.join(LABELS_FILE);
    write_latents(&lat, &codes)?;
    write_labels(&lab, &data.factor_names, &label_array(&data.labels))?;
    Ok((lat, lab))
}

/// Reads an export back as (codes, factor names, labels).
pub fn read_export(dir: &Path) -> Result<(Array2<f64>, Vec<String>, Array2<usize>)> {
    let codes = read_latents(&dir.join(LATENTS_FILE))?;
    let (names, labels) = read_labels(&dir.join(LABELS_FILE))?;
    if labels.nrows() != codes.nrows() {
        return Err(cdbench_core::Error::ShapeMismatch {
            expected: format!("{} label rows", codes.nrows()),
            got: labels.nrows().to_string(),
        }
        .into());
    }
    Ok((codes, names, labels))
}

pub fn report_hash(report: &MetricReport) -> String {
    hex::encode(Sha256::digest(report.to_json().as_bytes()))
}

/// Stage runner over a cache.
pub struct Runner {
    pub cache: Cache,
    pub progress: bool,
}

/// Lazily loaded pixels of one dataset.
pub struct DataSlot<'a> {
    dataset: &'a DatasetHandle,
    with_masks: bool,
    data: Option<TrainingSet>,
}

impl<'a> DataSlot<'a> {
    pub fn new(dataset: &'a DatasetHandle, with_masks: bool) -> Self {
        Self {
            dataset,
            with_masks,
            data: None,
        }
    }

    pub fn get(&mut self) -> Result<&TrainingSet> {
        if self.data.is_none() {
            self.data = Some(TrainingSet::from_manifest(&self.dataset.manifest, self.with_masks)?);
        }
        Ok(self.data.as_ref().expect("just loaded"))
    }
}

impl Runner {
    pub fn new(cache: Cache) -> Self {
        Self { cache, progress: false }
    }

    fn note(&self, msg: impl AsRef<str>) {
        if self.progress {
            eprintln!("[cdbench] {}", msg.as_ref());
        }
    }

    pub fn dataset(&self, graph: &CausalGraphSpec, settings: &RenderSettings, seed: u64) -> Result<DatasetHandle> {
        let key = stage_key(Stage::Datasets, &(graph, settings, seed))?;
        if let Some(dir) = self.cache.lookup(Stage::Datasets, &key) {
            return DatasetHandle::load(&dir.join(MANIFEST_FILE));
        }
        self.note(format!("generating {} dataset {}", settings.renderer, &key[..12]));
        let work = self.cache.reset(Stage::Datasets, &key)?;
        generate_dataset(graph, settings, &work, seed)?;
        let dir = self.cache.publish(Stage::Datasets, &key)?;
        DatasetHandle::load(&dir.join(MANIFEST_FILE))
    }

    /// The conditioned sub-manifest, stored beside its parent so relative
    /// record paths stay valid.
    pub fn filtered(&self, base: &DatasetHandle, conditioning: &Conditioning) -> Result<DatasetHandle> {
        let key = stage_key(Stage::Datasets, &(&base.hash, conditioning))?;
        let path = base.manifest.root.join(format!("manifest-{}.json", &key[..16]));
        if path.exists() {
            return DatasetHandle::load(&path);
        }
        let sub = apply_confounded_filter(&base.manifest, conditioning)?;
        self.note(format!("conditioning kept {} of {} records", sub.len(), base.manifest.len()));
        sub.save(&path)?;
        DatasetHandle::load(&path)
    }

    pub fn classifier(
        &self,
        dataset: &DatasetHandle,
        slot: &mut DataSlot<'_>,
        split_seed: u64,
        cfg: &ClassifierConfig,
    ) -> Result<OracleHandle> {
        let key = stage_key(Stage::Classifiers, &(&dataset.hash, split_seed, cfg))?;
        let dir = match self.cache.lookup(Stage::Classifiers, &key) {
            Some(dir) => dir,
            None => {
                self.note(format!("training oracle classifier {}", &key[..12]));
                let work = self.cache.reset(Stage::Classifiers, &key)?;
                let clf = train_classifier_on(slot.get()?, &dataset.manifest.graph, split_seed, cfg)?;
                clf.save(&work.join(CLASSIFIER_FILE))?;
                self.note(format!("oracle held-out accuracy {:?}", clf.meta.accuracy));
                self.cache.publish(Stage::Classifiers, &key)?
            }
        };
        let path = dir.join(CLASSIFIER_FILE);
        Ok(OracleHandle {
            classifier: Classifier::load(&path)?,
            hash: file_hash(&path)?,
            path,
        })
    }

    /// Trains (resuming any partial run) or fetches a model.
    pub fn model(&self, dataset: &DatasetHandle, slot: &mut DataSlot<'_>, cfg: &TrainConfig) -> Result<ModelHandle> {
        let key = stage_key(Stage::Models, &(&dataset.hash, cfg))?;
        let dir = match self.cache.lookup(Stage::Models, &key) {
            Some(dir) => dir,
            None => {
                let work = self.cache.begin(Stage::Models, &key)?;
                self.note(format!("training {} seed {} ({})", cfg.variant, cfg.seed, &key[..12]));
                let progress = self.progress;
                let out = train_with_progress(cfg, slot.get()?, &work, |e| {
                    if progress && (e.epoch % 10 == 0 || e.epoch == cfg.epochs) {
                        eprintln!("[cdbench]   epoch {} loss {:.4}", e.epoch, e.terms.total);
                    }
                })?;
                if out.resumed_from_step > 0 {
                    self.note(format!("resumed from step {}", out.resumed_from_step));
                }
                self.cache.publish(Stage::Models, &key)?
            }
        };
        ModelHandle::from_checkpoint(&dir.join(CHECKPOINT_FILE))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn report(
        &self,
        model: &ModelHandle,
        oracle: Option<&OracleHandle>,
        dataset: &DatasetHandle,
        slot: &mut DataSlot<'_>,
        variant: &str,
        seed: u64,
        opts: &EvalOptions,
    ) -> Result<MetricReport> {
        let oracle = if opts.wants(MetricKind::Cg) { oracle } else { None };
        let key = stage_key(
            Stage::Reports,
            &(&model.hash, oracle.map(|o| &o.hash), &dataset.hash, variant, seed, opts),
        )?;
        if let Some(dir) = self.cache.lookup(Stage::Reports, &key) {
            let text = fs::read_to_string(dir.join(REPORT_FILE)).map_err(|e| HarnessError::io(&dir, e))?;
            return Ok(serde_json::from_str(&text)?);
        }
        self.note(format!("scoring {variant} seed {seed}"));
        let (vae, _) = load_model(&model.checkpoint)?;
        let report = evaluate(&vae, &model.hash, oracle, dataset, slot.get()?, variant, seed, opts)?;
        let work = self.cache.reset(Stage::Reports, &key)?;
        Cache::write_atomic(&work.join(REPORT_FILE), report.to_json().as_bytes())?;
        self.cache.publish(Stage::Reports, &key)?;
        Ok(report)
    }
}

/// Reports of one experiment, plus snapshot reports when requested.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub reports: Vec<MetricReport>,
    /// (epoch, report) for every kept snapshot, in variant/seed/epoch order.
    pub snapshots: Vec<(usize, MetricReport)>,
}

fn in_stage<T>(name: impl Into<String>, r: Result<T>) -> Result<T> {
    r.map_err(|e| HarnessError::stage(name, e))
}

pub fn eval_options(cfg: &ExperimentConfig) -> EvalOptions {
    EvalOptions {
        metrics: cfg.metrics.clone(),
        rhos: cfg.rho.clone(),
        cg: cfg.cg.clone(),
        subsample_seed: cfg.dataset.seed,
    }
}

/// Runs every (variant, seed) leg; completed stages are read from the cache.
pub fn run_experiment(cfg: &ExperimentConfig, runner: &Runner) -> Result<Vec<MetricReport>> {
    Ok(run_experiment_detailed(cfg, runner)?.reports)
}

pub fn run_experiment_detailed(cfg: &ExperimentConfig, runner: &Runner) -> Result<ExperimentOutcome> {
    let resolved = cfg.resolve()?;
    let base = in_stage("dataset", runner.dataset(&resolved.graph, &resolved.settings, cfg.dataset.seed))?;
    let data = match &resolved.conditioning {
        Some(c) => in_stage("conditioning", runner.filtered(&base, c))?,
        None => base,
    };
    let with_masks = resolved.variants.iter().any(|v| v.bbox);
    let mut slot = DataSlot::new(&data, with_masks);

    let oracle = if cfg.wants(MetricKind::Cg) {
        let cc = cfg.classifier.config();
        let o = match &resolved.oracle_data {
            Some((graph, settings, seed)) => {
                let od = in_stage("oracle dataset", runner.dataset(graph, settings, *seed))?;
                let split = cfg.classifier.split_seed.unwrap_or(od.manifest.split_seeds[0]);
                let mut oslot = DataSlot::new(&od, false);
                in_stage("oracle", runner.classifier(&od, &mut oslot, split, &cc))?
            }
            None => {
                let split = cfg.classifier.split_seed.unwrap_or(data.manifest.split_seeds[0]);
                in_stage("oracle", runner.classifier(&data, &mut slot, split, &cc))?
            }
        };
        Some(o)
    } else {
        None
    };

    let opts = eval_options(cfg);
    let mut out = ExperimentOutcome {
        reports: Vec::new(),
        snapshots: Vec::new(),
    };
    for variant in &resolved.variants {
        for &seed in &cfg.seeds {
            let name = variant.to_string();
            let tc = cfg.train_config(*variant, seed);
            let model = in_stage(format!("train {name} seed {seed}"), runner.model(&data, &mut slot, &tc))?;
            let leg = format!("evaluate {name} seed {seed}");
            let report = in_stage(
                leg.clone(),
                runner.report(&model, oracle.as_ref(), &data, &mut slot, &name, seed, &opts),
            )?;
            for &epoch in &tc.snapshot_epochs {
                if let Some(snap) = in_stage(leg.clone(), model.snapshot(epoch))? {
                    let r = in_stage(
                        leg.clone(),
                        runner.report(&snap, oracle.as_ref(), &data, &mut slot, &name, seed, &opts),
                    )?;
                    out.snapshots.push((epoch, r));
                }
            }
            out.reports.push(report);
        }
    }
    if let Some(dir) = cfg.output_dir() {
        write_reports(&dir.join("reports"), &out.reports)?;
    }
    Ok(out)
}

/// One JSON file per report, named by variant and seed.
pub fn write_reports(dir: &Path, reports: &[MetricReport]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    reports
        .iter()
        .map(|r| {
            let p = dir.join(format!("{}-seed{}.json", r.variant, r.provenance.seed));
            Cache::write_atomic(&p, r.to_json().as_bytes())?;
            Ok(p)
        })
        .collect()
}

/// Loads reports from JSON files, or from every `*.json` in a directory.
pub fn load_reports(paths: &[PathBuf]) -> Result<Vec<MetricReport>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| HarnessError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    files
        .iter()
        .map(|f| {
            let text = fs::read_to_string(f).map_err(|e| HarnessError::io(f, e))?;
            let r: MetricReport = serde_json::from_str(&text)?;
            r.validate()?;
            Ok(r)
        })
        .collect()
}

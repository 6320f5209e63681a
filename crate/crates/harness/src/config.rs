//! Experiment configuration files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cdbench_core::datagen::{Conditioning, RenderSettings, RendererKind};
use cdbench_core::metrics::{BaselineMode, CgAggregation, CgOptions, OracleGate};
use cdbench_core::presets;
use cdbench_core::scm::CausalGraphSpec;
use cdbench_nn::{ClassifierConfig, TrainConfig, VariantSpec};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Irs,
    DciD,
    Uc,
    Cg,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [Self::Irs, Self::DciD, Self::Uc, Self::Cg];

    pub fn label(self) -> &'static str {
        match self {
            MetricKind::Irs => "IRS",
            MetricKind::DciD => "DCI-D",
            MetricKind::Uc => "UC",
            MetricKind::Cg => "CG",
        }
    }

    /// UC and CG are reported per ρ.
    pub fn per_rho(self) -> bool {
        matches!(self, MetricKind::Uc | MetricKind::Cg)
    }
}

impl FromStr for MetricKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "irs" => Ok(Self::Irs),
            "dci-d" => Ok(Self::DciD),
            "uc" => Ok(Self::Uc),
            "cg" => Ok(Self::Cg),
            other => Err(HarnessError::Config(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub renderer: RendererKind,
    /// Preset name (`toy`, `candle-lite`, `sprites`) or a graph TOML path.
    /// Defaults to the renderer's preset.
    #[serde(default)]
    pub graph: Option<String>,
    #[serde(default)]
    pub width: Option<u32>,
    #[serde(default)]
    pub height: Option<u32>,
    #[serde(default)]
    pub replicates: Option<usize>,
    #[serde(default)]
    pub max_records: Option<usize>,
    /// Preset name (`sprites-confounded`) or a conditioning TOML path.
    #[serde(default)]
    pub conditioning: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetSection {
    pub fn new(renderer: RendererKind) -> Self {
        Self {
            renderer,
            graph: None,
            width: None,
            height: None,
            replicates: None,
            max_records: None,
            conditioning: None,
            seed: 0,
        }
    }

    pub fn settings(&self) -> RenderSettings {
        let mut s = RenderSettings::for_renderer(self.renderer);
        if let Some(w) = self.width {
            s.width = w;
        }
        if let Some(h) = self.height {
            s.height = h;
        }
        if let Some(r) = self.replicates {
            s.replicates = r;
        }
        if self.max_records.is_some() {
            s.max_records = self.max_records;
        }
        s
    }

    pub fn resolve_graph(&self, base: &Path) -> Result<CausalGraphSpec> {
        let name = self.graph.as_deref().unwrap_or(self.renderer.as_str());
        resolve_graph(name, base)
    }

    pub fn resolve_conditioning(&self, base: &Path) -> Result<Option<Conditioning>> {
        self.conditioning.as_deref().map(|c| resolve_conditioning(c, base)).transpose()
    }
}

pub fn resolve_graph(name: &str, base: &Path) -> Result<CausalGraphSpec> {
    let graph = match name {
        "toy" => presets::toy_graph(),
        "candle-lite" => presets::candle_lite_graph(),
        "sprites" => presets::sprites_graph(),
        path => {
            let path = base.join(path);
            let text = read_config(&path)?;
            CausalGraphSpec::from_toml_str(&text).map_err(|e| HarnessError::Config(format!("graph {}: {e}", path.display())))?
        }
    };
    graph
        .validate()
        .map_err(|e| HarnessError::Config(format!("graph `{name}`: {e}")))?;
    Ok(graph)
}

pub fn resolve_conditioning(name: &str, base: &Path) -> Result<Conditioning> {
    match name {
        "sprites-confounded" => Ok(presets::sprites_confounded_conditioning()),
        path => {
            let path = base.join(path);
            Conditioning::from_toml_str(&read_config(&path)?)
                .map_err(|e| HarnessError::Config(format!("conditioning {}: {e}", path.display())))
        }
    }
}

fn read_config(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))
}

/// Optional overrides on top of [`TrainConfig::preset`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub latent_dim: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub disc_hidden: Option<usize>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub lambda_d: Option<f64>,
    pub lambda_od: Option<f64>,
    pub supervised_weight: Option<f64>,
    pub supervision_fraction: Option<f64>,
    pub lambda_bb: Option<f64>,
    pub lr: Option<f64>,
    pub disc_lr: Option<f64>,
    pub snapshot_epochs: Option<Vec<usize>>,
}

macro_rules! overlay {
    ($dst:expr, $src:expr, $($field:ident),*) => {
        $(if let Some(v) = &$src.$field { $dst.$field = v.clone(); })*
    };
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        overlay!(
            cfg,
            self,
            epochs,
            batch_size,
            latent_dim,
            hidden,
            disc_hidden,
            beta,
            gamma,
            lambda_d,
            lambda_od,
            supervised_weight,
            supervision_fraction,
            lambda_bb,
            lr,
            disc_lr,
            snapshot_epochs
        );
        if self.steps.is_some() {
            cfg.steps = self.steps;
        }
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = read_config(path)?;
        toml::from_str(&text).map_err(|source| HarnessError::Toml {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Epoch budget used when a config gives none.
pub fn default_epochs(renderer: RendererKind) -> usize {
    match renderer {
        RendererKind::Toy => 100,
        RendererKind::Sprites => 30,
        RendererKind::CandleLite => 20,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub holdout: Option<f64>,
    pub seed: Option<u64>,
    /// Defaults to the dataset's first split seed.
    pub split_seed: Option<u64>,
    /// Separate dataset for the oracle; must share the factor schema.
    pub dataset: Option<DatasetSection>,
}

impl ClassifierSection {
    pub fn config(&self) -> ClassifierConfig {
        let mut c = ClassifierConfig::default();
        overlay!(c, self, epochs, batch_size, lr, holdout, seed);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CgSection {
    #[serde(default)]
    pub baseline: BaselineMode,
    #[serde(default)]
    pub aggregation: CgAggregation,
    #[serde(default = "default_batch_records")]
    pub batch_records: usize,
    #[serde(default = "default_floor")]
    pub floor: f64,
    #[serde(default)]
    pub per_factor: BTreeMap<String, f64>,
    /// Score CG on a seeded subsample of this many records.
    #[serde(default)]
    pub max_records: Option<usize>,
}

fn default_batch_records() -> usize {
    16
}

fn default_floor() -> f64 {
    OracleGate::default().floor
}

impl Default for CgSection {
    fn default() -> Self {
        Self {
            baseline: BaselineMode::default(),
            aggregation: CgAggregation::default(),
            batch_records: default_batch_records(),
            floor: default_floor(),
            per_factor: BTreeMap::new(),
            max_records: None,
        }
    }
}

impl CgSection {
    pub fn options(&self) -> CgOptions {
        CgOptions {
            baseline: self.baseline,
            aggregation: self.aggregation,
            batch_records: self.batch_records,
            gate: OracleGate {
                floor: self.floor,
                per_factor: self.per_factor.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSection,
    pub variants: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_rho")]
    pub rho: Vec<usize>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricKind>,
    #[serde(default)]
    pub train: TrainOverrides,
    /// Per-variant overrides, applied after `train`.
    #[serde(default)]
    pub variant_train: BTreeMap<String, TrainOverrides>,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub cg: CgSection,
    /// Directory for reports, tables and plots.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_rho() -> Vec<usize> {
    vec![1]
}

fn default_metrics() -> Vec<MetricKind> {
    MetricKind::ALL.to_vec()
}

/// Everything a run needs, with every reference resolved.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub graph: CausalGraphSpec,
    pub settings: RenderSettings,
    pub conditioning: Option<Conditioning>,
    pub oracle_data: Option<(CausalGraphSpec, RenderSettings, u64)>,
    pub variants: Vec<VariantSpec>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|source| HarnessError::Toml {
            path: base_dir.to_path_buf(),
            source,
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_config(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut cfg: Self = toml::from_str(&text).map_err(|source| HarnessError::Toml {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.base_dir = base;
        Ok(cfg)
    }

    pub fn output_dir(&self) -> Option<PathBuf> {
        self.output.as_ref().map(|o| self.base_dir.join(o))
    }

    /// Checks every field and resolves presets and files, before any compute.
    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("`seeds` must not be empty".into()));
        }
        if self.variants.is_empty() {
            return Err(HarnessError::Config("`variants` must not be empty".into()));
        }
        if self.metrics.is_empty() {
            return Err(HarnessError::Config("`metrics` must not be empty".into()));
        }
        if self.rho.is_empty() || self.rho.contains(&0) {
            return Err(HarnessError::Config("`rho` needs at least one positive value".into()));
        }
        let variants = self
            .variants
            .iter()
            .map(|v| VariantSpec::from_str(v).map_err(|e| HarnessError::Config(format!("variant `{v}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(k) = self.variant_train.keys().find(|k| !self.variants.contains(k)) {
            return Err(HarnessError::Config(format!("`variant_train.{k}` names a variant that is not run")));
        }
        let graph = self.dataset.resolve_graph(&self.base_dir)?;
        let conditioning = self.dataset.resolve_conditioning(&self.base_dir)?;
        if let Some(c) = &conditioning {
            c.validate(&graph).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        let oracle_data = match &self.classifier.dataset {
            Some(d) => {
                let g = d.resolve_graph(&self.base_dir)?;
                if g.schema_hash() != graph.schema_hash() {
                    return Err(HarnessError::Config(
                        "the oracle dataset must share the experiment's factor schema".into(),
                    ));
                }
                Some((g, d.settings(), d.seed))
            }
            None => None,
        };
        for v in &variants {
            let cfg = self.train_config(*v, self.seeds[0]);
            cfg.validate()?;
            if self.rho.iter().any(|&r| r > cfg.latent_dim) {
                return Err(HarnessError::Config(format!(
                    "ρ values {:?} exceed the latent size {}",
                    self.rho, cfg.latent_dim
                )));
            }
        }
        Ok(ResolvedExperiment {
            graph,
            settings: self.dataset.settings(),
            conditioning,
            oracle_data,
            variants,
        })
    }

    /// Training configuration of one (variant, seed) leg.
    pub fn train_config(&self, variant: VariantSpec, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::preset(self.dataset.renderer, variant, default_epochs(self.dataset.renderer), seed);
        self.train.apply(&mut cfg);
        if let Some(o) = self.variant_train.get(&variant.to_string()) {
            o.apply(&mut cfg);
        }
        cfg
    }

    pub fn wants(&self, m: MetricKind) -> bool {
        self.metrics.contains(&m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml_str(text, Path::new("."))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse("name = \"t\"\nvariants = [\"beta-vae\"]\n[dataset]\nrenderer = \"toy\"\n").unwrap();
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.rho, vec![1]);
        assert_eq!(cfg.metrics.len(), 4);
        let r = cfg.resolve().unwrap();
        assert_eq!(r.graph, presets::toy_graph());
        assert_eq!(cfg.train_config(r.variants[0], 0).epochs, 100);
    }

    #[test]
    fn overrides_stack() {
        let cfg = parse(
            "name = \"t\"\nvariants = [\"beta-vae\", \"factor-vae\"]\n[dataset]\nrenderer = \"sprites\"\n\
             [train]\nepochs = 3\nlr = 0.01\n[variant_train.factor-vae]\nepochs = 5\n",
        )
        .unwrap();
        let r = cfg.resolve().unwrap();
        let a = cfg.train_config(r.variants[0], 1);
        let b = cfg.train_config(r.variants[1], 1);
        assert_eq!((a.epochs, a.lr, a.seed), (3, 0.01, 1));
        assert_eq!((b.epochs, b.lr), (5, 0.01));
    }

    #[test]
    fn bad_references_are_config_errors() {
        let base = "name = \"t\"\n[dataset]\nrenderer = \"toy\"\n";
        for extra in [
            "variants = [\"gan\"]\n",
            "variants = []\n",
            "variants = [\"beta-vae\"]\nseeds = []\n",
            "variants = [\"beta-vae\"]\nrho = [0]\n",
            "variants = [\"beta-vae\"]\nrho = [65]\n",
        ] {
            let err = parse(&format!("{extra}{base}")).unwrap().resolve().unwrap_err();
            assert!(err.is_config(), "{extra}: {err}");
        }
        assert!(parse(&format!("variants = [\"beta-vae\"]\nbogus = 1\n{base}")).unwrap_err().is_config());
        let missing = parse(&format!("variants = [\"beta-vae\"]\n{base}graph = \"nowhere.toml\"\n")).unwrap();
        assert!(missing.resolve().unwrap_err().is_config());
    }
}

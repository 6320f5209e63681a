//! Image rendering, dataset manifests, confounded filtering and pairing.

pub mod candle;
pub mod filter;
pub mod metadata;
pub mod pairs;
pub mod raster;
pub mod solids;
pub mod sprites;
pub mod toy;

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use filter::{apply_confounded_filter, Conditioning, KeepRule};
pub use pairs::{query_pairs, PairMode, PairingQuery, RecordPair};
pub use raster::Bounds;

use crate::error::{Error, Result};
use crate::scm::{derive_seed, enumerate_valid_assignments, CausalGraphSpec, FactorAssignment, DEFAULT_ENUMERATION_CAP};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RendererKind {
    Toy,
    CandleLite,
    Sprites,
}

impl RendererKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RendererKind::Toy => "toy",
            RendererKind::CandleLite => "candle-lite",
            RendererKind::Sprites => "sprites",
        }
    }
}

impl FromStr for RendererKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "toy" => RendererKind::Toy,
            "candle-lite" => RendererKind::CandleLite,
            "sprites" => RendererKind::Sprites,
            other => return Err(Error::Config(format!("unknown renderer `{other}`"))),
        })
    }
}

impl std::fmt::Display for RendererKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub renderer: RendererKind,
    pub width: u32,
    pub height: u32,
    /// Records rendered per valid assignment, each with its own nuisance seed.
    #[serde(default = "one")]
    pub replicates: usize,
    /// Uniform subsample (without replacement) of the expanded record list.
    #[serde(default)]
    pub max_records: Option<usize>,
}

fn one() -> usize {
    1
}

impl RenderSettings {
    pub fn toy() -> Self {
        Self {
            renderer: RendererKind::Toy,
            width: toy::TOY_SIZE,
            height: toy::TOY_SIZE,
            replicates: crate::presets::TOY_REPLICATES,
            max_records: None,
        }
    }

    pub fn candle_lite(width: u32, height: u32, max_records: Option<usize>) -> Self {
        Self {
            renderer: RendererKind::CandleLite,
            width,
            height,
            replicates: 1,
            max_records,
        }
    }

    pub fn sprites() -> Self {
        Self {
            renderer: RendererKind::Sprites,
            width: sprites::SPRITE_SIZE,
            height: sprites::SPRITE_SIZE,
            replicates: 1,
            max_records: None,
        }
    }

    pub fn for_renderer(kind: RendererKind) -> Self {
        match kind {
            RendererKind::Toy => Self::toy(),
            RendererKind::CandleLite => Self::candle_lite(64, 64, None),
            RendererKind::Sprites => Self::sprites(),
        }
    }

    fn validate(&self) -> Result<()> {
        let fixed = match self.renderer {
            RendererKind::Toy => Some(toy::TOY_SIZE),
            RendererKind::Sprites => Some(sprites::SPRITE_SIZE),
            RendererKind::CandleLite => None,
        };
        match fixed {
            Some(s) if self.width != s || self.height != s => Err(Error::Config(format!(
                "{} renderer draws {s}×{s} images only",
                self.renderer
            ))),
            None if !(16..=320).contains(&self.width) || !(16..=240).contains(&self.height) => Err(Error::Config(
                "CANDLE-lite resolution must lie within 16×16 .. 320×240".into(),
            )),
            _ if self.replicates == 0 => Err(Error::Config("replicates must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub id: String,
    pub pixels: RgbImage,
    pub assignment: FactorAssignment,
    pub bounds: Bounds,
    /// Row-major foreground coverage, available for freshly rendered records.
    pub foreground: Option<Vec<bool>>,
}

/// Renders one record after checking the assignment against the graph.
pub fn render(
    graph: &CausalGraphSpec,
    settings: &RenderSettings,
    assignment: &FactorAssignment,
    id: &str,
) -> Result<ImageRecord> {
    settings.validate()?;
    let idx = graph.resolve(assignment)?;
    if let Some(r) = graph.compile_rules()?.first_violation(&idx) {
        return Err(Error::Constraint(graph.observed_rules[r].reason.clone()));
    }
    let canvas = match settings.renderer {
        RendererKind::Toy => toy::draw(assignment)?,
        RendererKind::CandleLite => candle::draw(assignment, settings.width, settings.height)?,
        RendererKind::Sprites => sprites::draw(assignment)?,
    };
    let mask = canvas.foreground_mask().to_vec();
    let bounds = Bounds::from_mask(&mask, canvas.width, canvas.height)?;
    Ok(ImageRecord {
        id: id.to_string(),
        pixels: canvas.to_rgb8(),
        assignment: assignment.clone(),
        bounds,
        foreground: Some(mask),
    })
}

pub fn render_toy(assignment: &FactorAssignment) -> Result<ImageRecord> {
    render(&crate::presets::toy_graph(), &RenderSettings::toy(), assignment, "toy")
}

pub fn render_candle_lite(assignment: &FactorAssignment, width: u32, height: u32) -> Result<ImageRecord> {
    render(
        &crate::presets::candle_lite_graph(),
        &RenderSettings::candle_lite(width, height, None),
        assignment,
        "candle-lite",
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub id: String,
    pub image: String,
    pub metadata: String,
    pub assignment: FactorAssignment,
    pub bounds: Bounds,
    /// SHA-256 of the encoded image file.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub graph: CausalGraphSpec,
    pub render: RenderSettings,
    pub seed: u64,
    pub split_seeds: Vec<u64>,
    #[serde(default)]
    pub filters: Vec<String>,
    pub records: Vec<RecordEntry>,
    /// Directory that relative record paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifests always serialize")
    }

    /// Content hash over the serialized manifest, which embeds every image hash.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Schema(format!("duplicate record id `{}`", r.id)));
            }
        }
        Ok(())
    }

    pub fn image_path(&self, r: &RecordEntry) -> PathBuf {
        self.root.join(&r.image)
    }

    pub fn metadata_path(&self, r: &RecordEntry) -> PathBuf {
        self.root.join(&r.metadata)
    }

    pub fn load_image(&self, r: &RecordEntry) -> Result<RgbImage> {
        let path = self.image_path(r);
        let bytes = fs::read(&path).map_err(|source| Error::RecordIo {
            id: r.id.clone(),
            path: path.clone(),
            source,
        })?;
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|source| Error::Image { path, source })?;
        Ok(img.to_rgb8())
    }

    pub fn load_images(&self) -> Result<Vec<RgbImage>> {
        self.records.iter().map(|r| self.load_image(r)).collect()
    }

    /// Value index of every record on every factor, in factor declaration order.
    pub fn label_matrix(&self) -> Result<Vec<Vec<usize>>> {
        self.records.iter().map(|r| self.graph.resolve(&r.assignment)).collect()
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = path.with_extension(format!(
        "{}.tmp{}",
        path.extension().and_then(|e| e.to_str()).unwrap_or(""),
        std::process::id()
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).map_err(|source| Error::Image {
        path: PathBuf::from("<memory>"),
        source,
    })?;
    Ok(buf.into_inner())
}

/// Assignments (with per-record seeds) that a dataset of this spec contains.
pub fn plan_records(graph: &CausalGraphSpec, settings: &RenderSettings, seed: u64) -> Result<Vec<FactorAssignment>> {
    let valid = enumerate_valid_assignments(graph, DEFAULT_ENUMERATION_CAP)?;
    if valid.is_empty() {
        return Err(Error::Unsatisfiable);
    }
    let mut planned = Vec::with_capacity(valid.len() * settings.replicates);
    for a in &valid {
        for _ in 0..settings.replicates {
            let ordinal = planned.len() as u64;
            planned.push(FactorAssignment {
                values: a.values.clone(),
                seed: derive_seed(seed, ordinal),
            });
        }
    }
    if let Some(n) = settings.max_records {
        if n == 0 {
            return Err(Error::Config("max_records must be at least 1".into()));
        }
        if n < planned.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
            let mut keep = rand::seq::index::sample(&mut rng, planned.len(), n).into_vec();
            keep.sort_unstable();
            planned = keep.into_iter().map(|i| planned[i].clone()).collect();
        }
    }
    Ok(planned)
}

/// Renders every planned record into `out_dir` and writes the manifest.
pub fn generate_dataset(
    graph: &CausalGraphSpec,
    settings: &RenderSettings,
    out_dir: &Path,
    seed: u64,
) -> Result<DatasetManifest> {
    graph.validate()?;
    settings.validate()?;
    let planned = plan_records(graph, settings, seed)?;
    for sub in ["images", "meta"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut records = Vec::with_capacity(planned.len());
    for (k, assignment) in planned.iter().enumerate() {
        let id = format!("{k:06}");
        let rec = render(graph, settings, assignment, &id)?;
        let image = format!("images/{id}.png");
        let meta = format!("meta/{id}.json");
        let png = encode_png(&rec.pixels)?;
        let record_err = |path: PathBuf| {
            let id = id.clone();
            move |source| Error::RecordIo { id, path, source }
        };
        let image_path = out_dir.join(&image);
        fs::write(&image_path, &png).map_err(record_err(image_path.clone()))?;
        let meta_path = out_dir.join(&meta);
        let json = metadata::to_json(settings.renderer, &assignment.values, rec.bounds)?;
        fs::write(&meta_path, json).map_err(record_err(meta_path.clone()))?;
        records.push(RecordEntry {
            id,
            image,
            metadata: meta,
            assignment: assignment.clone(),
            bounds: rec.bounds,
            sha256: hex::encode(Sha256::digest(&png)),
        });
    }
    let manifest = DatasetManifest {
        graph: graph.clone(),
        render: settings.clone(),
        seed,
        split_seeds: vec![derive_seed(seed, 1 << 40), derive_seed(seed, (1 << 40) + 1)],
        filters: Vec::new(),
        records,
        root: out_dir.to_path_buf(),
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

//! In-memory training tensors built from a dataset manifest.
//!
//! Images are average-pooled by an integer factor `k` to the model
//! resolution. Masked reconstruction sums are kept as per-block moments so
//! the native-resolution penalty can be evaluated exactly at pooled size.

use cdbench_core::datagen::DatasetManifest;
use cdbench_core::scm::derive_seed;
use cdbench_core::ImageBatch;
use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};

/// Longest pooled side the models are sized for.
pub const MODEL_SIDE: usize = 40;

/// Pool factor for a native frame: `ceil(max(w, h) / 40)`, required to divide both sides.
pub fn pool_factor(width: usize, height: usize) -> Result<usize> {
    let k = width.max(height).div_ceil(MODEL_SIDE).max(1);
    if width % k != 0 || height % k != 0 {
        return Err(NnError::Config(format!(
            "image size {width}×{height} is not divisible by the pool factor {k}"
        )));
    }
    Ok(k)
}

/// Geometry shared by a model and the data it consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pool: usize,
}

impl Geometry {
    pub fn for_native(channels: usize, height: usize, width: usize) -> Result<Self> {
        Ok(Self {
            channels,
            height,
            width,
            pool: pool_factor(width, height)?,
        })
    }

    pub fn pooled_height(&self) -> usize {
        self.height / self.pool
    }

    pub fn pooled_width(&self) -> usize {
        self.width / self.pool
    }

    /// Values per pooled image.
    pub fn pooled_len(&self) -> usize {
        self.channels * self.pooled_height() * self.pooled_width()
    }

    pub fn native_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn check_batch(&self, b: &ImageBatch) -> Result<()> {
        if (b.channels, b.height, b.width) != (self.channels, self.height, self.width) {
            return Err(cdbench_core::Error::ShapeMismatch {
                expected: format!("{}×{}×{}", self.channels, self.height, self.width),
                got: format!("{}×{}×{}", b.channels, b.height, b.width),
            }
            .into());
        }
        Ok(())
    }

    /// Block means of one native CHW image.
    pub fn pool_image(&self, src: &[f32], out: &mut [f32]) {
        let (k, ph, pw) = (self.pool, self.pooled_height(), self.pooled_width());
        let inv = 1.0 / (k * k) as f32;
        for c in 0..self.channels {
            for by in 0..ph {
                for bx in 0..pw {
                    let mut s = 0.0;
                    for dy in 0..k {
                        let row = (c * self.height + by * k + dy) * self.width + bx * k;
                        s += src[row..row + k].iter().sum::<f32>();
                    }
                    out[(c * ph + by) * pw + bx] = s * inv;
                }
            }
        }
    }

    pub fn pool_batch(&self, b: &ImageBatch) -> Result<Vec<f32>> {
        self.check_batch(b)?;
        let d = self.pooled_len();
        let mut out = vec![0.0; b.len * d];
        for n in 0..b.len {
            self.pool_image(b.image(n), &mut out[n * d..(n + 1) * d]);
        }
        Ok(out)
    }

    /// Nearest-neighbour upsampling of pooled images back to the native frame.
    pub fn upsample(&self, pooled: &[f32], len: usize) -> Result<ImageBatch> {
        let (k, ph, pw) = (self.pool, self.pooled_height(), self.pooled_width());
        let (d, nd) = (self.pooled_len(), self.native_len());
        let mut data = vec![0.0; len * nd];
        for n in 0..len {
            let src = &pooled[n * d..(n + 1) * d];
            let dst = &mut data[n * nd..(n + 1) * nd];
            for c in 0..self.channels {
                for y in 0..self.height {
                    for x in 0..self.width {
                        dst[(c * self.height + y) * self.width + x] = src[(c * ph + y / k) * pw + x / k];
                    }
                }
            }
        }
        Ok(ImageBatch::new(len, self.channels, self.height, self.width, data)?)
    }
}

/// Per-block moments of a masked image: `Σw`, `Σw·x`, `Σw·x²` over each k×k block.
#[derive(Debug, Clone, Default)]
pub struct MaskMoments {
    pub count: Vec<f32>,
    pub sum: Vec<f32>,
    pub sum_sq: Vec<f32>,
}

/// Supplies a native-resolution foreground mask (row-major, H·W) per record.
/// The default provider reads record bounds from the manifest; a
/// segmentation model could be plugged in for datasets without bounds.
pub trait MaskProvider {
    fn mask(&self, record: usize) -> Option<Vec<bool>>;
}

struct BoundsMasks<'a>(&'a DatasetManifest);

impl MaskProvider for BoundsMasks<'_> {
    fn mask(&self, record: usize) -> Option<Vec<bool>> {
        let r = &self.0.render;
        Some(self.0.records[record].bounds.indicator(r.width, r.height))
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub geometry: Geometry,
    pub len: usize,
    /// Pooled images, `len × pooled_len`.
    pub x: Vec<f32>,
    pub factor_names: Vec<String>,
    pub cardinalities: Vec<usize>,
    /// `len × n` value indices.
    pub labels: Vec<Vec<usize>>,
    pub labeled: Vec<bool>,
    pub masks: Option<MaskMoments>,
    pub dataset_hash: String,
}

impl TrainingSet {
    /// Loads every image of the manifest. Bounds moments are built when `with_masks`.
    pub fn from_manifest(manifest: &DatasetManifest, with_masks: bool) -> Result<Self> {
        if manifest.is_empty() {
            return Err(cdbench_core::Error::InsufficientData("manifest has no records".into()).into());
        }
        let images = manifest.load_images()?;
        let provider = BoundsMasks(manifest);
        let mut set = Self::from_images(
            &images,
            manifest.graph.factor_names().iter().map(|s| s.to_string()).collect(),
            manifest.graph.cardinalities(),
            manifest.label_matrix()?,
            manifest.split_seeds.last().copied().unwrap_or(manifest.seed),
            with_masks.then_some(&provider as &dyn MaskProvider),
        )?;
        set.dataset_hash = manifest.hash();
        Ok(set)
    }

    pub fn from_images(
        images: &[RgbImage],
        factor_names: Vec<String>,
        cardinalities: Vec<usize>,
        labels: Vec<Vec<usize>>,
        label_seed: u64,
        masks: Option<&dyn MaskProvider>,
    ) -> Result<Self> {
        let batch = ImageBatch::from_rgb(images)?;
        Self::from_batch(&batch, factor_names, cardinalities, labels, label_seed, masks)
    }

    pub fn from_batch(
        batch: &ImageBatch,
        factor_names: Vec<String>,
        cardinalities: Vec<usize>,
        labels: Vec<Vec<usize>>,
        label_seed: u64,
        masks: Option<&dyn MaskProvider>,
    ) -> Result<Self> {
        let geometry = Geometry::for_native(batch.channels, batch.height, batch.width)?;
        let len = batch.len;
        if labels.len() != len || labels.iter().any(|r| r.len() != cardinalities.len()) {
            return Err(NnError::Config("label matrix does not match the image count or factor list".into()));
        }
        let x = geometry.pool_batch(batch)?;
        let moments = match masks {
            None => None,
            Some(p) => Some(mask_moments(&geometry, batch, p)?),
        };
        Ok(Self {
            geometry,
            len,
            x,
            factor_names,
            cardinalities,
            labels,
            labeled: labeled_flags(len, label_seed, 0.10),
            masks: moments,
            dataset_hash: String::new(),
        })
    }

    pub fn with_supervision_fraction(mut self, fraction: f64, seed: u64) -> Self {
        self.labeled = labeled_flags(self.len, seed, fraction);
        self
    }

    pub fn pooled(&self, i: usize) -> &[f32] {
        let d = self.geometry.pooled_len();
        &self.x[i * d..(i + 1) * d]
    }

    pub fn num_labeled(&self) -> usize {
        self.labeled.iter().filter(|&&b| b).count()
    }
}

/// Marks exactly `ceil(fraction · len)` records, chosen by a seeded draw.
pub fn labeled_flags(len: usize, seed: u64, fraction: f64) -> Vec<bool> {
    let k = ((fraction * len as f64) - 1e-9).ceil().clamp(0.0, len as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5u64 << 40));
    let mut flags = vec![false; len];
    for i in rand::seq::index::sample(&mut rng, len, k) {
        flags[i] = true;
    }
    flags
}

fn mask_moments(g: &Geometry, batch: &ImageBatch, provider: &dyn MaskProvider) -> Result<MaskMoments> {
    let (k, ph, pw, d) = (g.pool, g.pooled_height(), g.pooled_width(), g.pooled_len());
    let mut m = MaskMoments {
        count: vec![0.0; batch.len * d],
        sum: vec![0.0; batch.len * d],
        sum_sq: vec![0.0; batch.len * d],
    };
    for n in 0..batch.len {
        let mask = provider
            .mask(n)
            .ok_or_else(|| NnError::Config(format!("record {n} has no bounds mask")))?;
        if mask.len() != g.height * g.width {
            return Err(cdbench_core::Error::ShapeMismatch {
                expected: format!("{} mask pixels", g.height * g.width),
                got: mask.len().to_string(),
            }
            .into());
        }
        let img = batch.image(n);
        for c in 0..g.channels {
            for y in 0..g.height {
                for x in 0..g.width {
                    if !mask[y * g.width + x] {
                        continue;
                    }
                    let v = img[(c * g.height + y) * g.width + x];
                    let b = n * d + (c * ph + y / k) * pw + x / k;
                    m.count[b] += 1.0;
                    m.sum[b] += v;
                    m.sum_sq[b] += v * v;
                }
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_factors() {
        assert_eq!(pool_factor(64, 64).unwrap(), 2);
        assert_eq!(pool_factor(128, 128).unwrap(), 4);
        assert_eq!(pool_factor(320, 240).unwrap(), 8);
        assert_eq!(pool_factor(32, 32).unwrap(), 1);
        assert!(pool_factor(100, 75).is_err());
    }

    #[test]
    fn labeled_count_is_ceiling() {
        for len in [1, 9, 10, 11, 432, 1458] {
            let n = labeled_flags(len, 3, 0.10).iter().filter(|&&b| b).count();
            assert_eq!(n, (len as f64 / 10.0).ceil() as usize, "len {len}");
        }
    }

    #[test]
    fn upsample_inverts_pool_on_block_constant_images() {
        let g = Geometry::for_native(3, 80, 80).unwrap();
        let pooled: Vec<f32> = (0..g.pooled_len()).map(|i| (i % 7) as f32 / 7.0).collect();
        let up = g.upsample(&pooled, 1).unwrap();
        assert_eq!(g.pool_batch(&up).unwrap(), pooled);
    }
}

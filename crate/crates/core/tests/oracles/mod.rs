//! Direct transcriptions of the UC and CG procedures, plus reference models
//! with known causal structure. Kept free of the library's metric code.
#![allow(dead_code)]

use std::collections::BTreeSet;

use cdbench_core::metrics::{FactorClassifier, LatentGenerator};
use cdbench_core::{ImageBatch, Result};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Algorithm 1: sum of Jaccard overlaps over `i < j`, then `1 − 2T / (n(n−1))`.
pub fn uc_alg1(sets: &[BTreeSet<usize>]) -> f64 {
    let n = sets.len();
    let mut t = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let inter = sets[i].iter().filter(|d| sets[j].contains(d)).count();
            let mut union = sets[i].clone();
            union.extend(sets[j].iter().copied());
            if !union.is_empty() {
                t += inter as f64 / union.len() as f64;
            }
        }
    }
    1.0 - (2.0 * t) / ((n * (n - 1)) as f64)
}

/// Value maximally deviated from `current` among the dataset's values of dim `d`.
fn farthest(codes: ArrayView2<f64>, d: usize, current: f64) -> f64 {
    let col = codes.column(d);
    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
    if (hi - current).abs() >= (lo - current).abs() {
        hi
    } else {
        lo
    }
}

fn prob_of<G: LatentGenerator, C: FactorClassifier>(g: &G, c: &C, z: &[f64], i: usize, k: usize) -> f64 {
    let row = Array2::from_shape_vec((1, z.len()), z.to_vec()).unwrap();
    let img = g.generate(row.view()).unwrap();
    c.predict_proba(&img).unwrap()[i][[0, k]]
}

/// Algorithm 2 with the max-deviation baseline, one image at a time.
/// Per factor: `ACE / L` with `ACE = Σ_x |ICE_in − ICE_out|`; CG is the mean over factors.
pub fn cg_alg2<G: LatentGenerator, C: FactorClassifier>(
    g: &G,
    c: &C,
    codes: ArrayView2<f64>,
    labels: ArrayView2<usize>,
    sets: &[BTreeSet<usize>],
) -> f64 {
    let (l, m) = codes.dim();
    let n = sets.len();
    let mut per_factor = Vec::new();
    for i in 0..n {
        let mut ace = 0.0;
        for x in 0..l {
            let z: Vec<f64> = codes.row(x).to_vec();
            let k = labels[[x, i]];
            let p_cf1 = prob_of(g, c, &z, i, k);

            let mut z_in = z.clone();
            for &d in &sets[i] {
                z_in[d] = farthest(codes, d, z[d]);
            }
            let ice_in = (p_cf1 - prob_of(g, c, &z_in, i, k)).abs();

            let mut z_out = z.clone();
            for d in (0..m).filter(|d| !sets[i].contains(d)) {
                z_out[d] = farthest(codes, d, z[d]);
            }
            let ice_out = (p_cf1 - prob_of(g, c, &z_out, i, k)).abs();
            ace += (ice_in - ice_out).abs();
        }
        per_factor.push(ace / l as f64);
    }
    let mut cg = 0.0;
    for v in &per_factor {
        cg += v;
    }
    cg / n as f64
}

/// Importance of latent `d` for factor `i`: one minus the mean within-value
/// 99th-percentile deviation, relative to the latent's largest deviation.
pub fn irs_importance(latents: ArrayView2<f64>, labels: ArrayView2<usize>) -> Vec<Vec<f64>> {
    let (l, m) = latents.dim();
    let n = labels.ncols();
    let mut out = vec![vec![0.0; m]; n];
    for d in 0..m {
        let col: Vec<f64> = latents.column(d).to_vec();
        let mean = col.iter().sum::<f64>() / l as f64;
        let max_dev = col.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        for i in 0..n {
            let values: BTreeSet<usize> = labels.column(i).iter().copied().collect();
            let mut total = 0.0;
            for &v in &values {
                let group: Vec<f64> = (0..l).filter(|&r| labels[[r, i]] == v).map(|r| col[r]).collect();
                let gm = group.iter().sum::<f64>() / group.len() as f64;
                let mut devs: Vec<f64> = group.iter().map(|x| (x - gm).abs()).collect();
                devs.sort_by(f64::total_cmp);
                let pos = 0.99 * (devs.len() - 1) as f64;
                let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
                total += devs[lo] + (devs[hi] - devs[lo]) * (pos - lo as f64);
            }
            out[i][d] = if max_dev > 0.0 {
                (1.0 - total / values.len() as f64 / max_dev).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
    out
}

/// Latent `i` holds the value index of factor `i`; the renderer writes each
/// latent into its own pixel and the classifier reads the pixel back.
pub struct IdentityModel {
    pub cardinalities: Vec<usize>,
}

impl IdentityModel {
    /// Every combination of factor values, with codes equal to the labels.
    pub fn dataset(&self) -> (Array2<f64>, Array2<usize>) {
        let n = self.cardinalities.len();
        let total: usize = self.cardinalities.iter().product();
        let mut labels = Array2::zeros((total, n));
        for r in 0..total {
            let mut rest = r;
            for i in (0..n).rev() {
                labels[[r, i]] = rest % self.cardinalities[i];
                rest /= self.cardinalities[i];
            }
        }
        (labels.mapv(|v| v as f64), labels)
    }
}

impl LatentGenerator for IdentityModel {
    fn latent_dim(&self) -> usize {
        self.cardinalities.len()
    }

    fn generate(&self, z: ArrayView2<f64>) -> Result<ImageBatch> {
        let data = z.iter().map(|&v| v as f32).collect();
        ImageBatch::new(z.nrows(), 1, 1, z.ncols(), data)
    }
}

impl FactorClassifier for IdentityModel {
    fn factor_names(&self) -> Vec<String> {
        (0..self.cardinalities.len()).map(|i| format!("g{i}")).collect()
    }

    fn cardinalities(&self) -> Vec<usize> {
        self.cardinalities.clone()
    }

    fn predict_proba(&self, images: &ImageBatch) -> Result<Vec<Array2<f64>>> {
        Ok(self
            .cardinalities
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                Array2::from_shape_fn((images.len, k), |(b, v)| {
                    let read = images.image(b)[i].round().clamp(0.0, (k - 1) as f32) as usize;
                    if read == v {
                        1.0
                    } else {
                        0.0
                    }
                })
            })
            .collect())
    }

    fn validation_accuracy(&self) -> Vec<f64> {
        vec![1.0; self.cardinalities.len()]
    }
}

/// A random smooth generator and softmax classifier. Each image depends on
/// its own latent row only, so batching never changes the result.
pub struct RandomModel {
    pub m: usize,
    pub pixels: usize,
    pub w: Array2<f64>,
    pub heads: Vec<Array2<f64>>,
}

impl RandomModel {
    pub fn new(m: usize, cardinalities: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels = 6;
        let w = Array2::from_shape_fn((m, pixels), |_| rng.gen_range(-1.5..1.5));
        let heads = cardinalities
            .iter()
            .map(|&k| Array2::from_shape_fn((pixels, k), |_| rng.gen_range(-4.0..4.0)))
            .collect();
        Self { m, pixels, w, heads }
    }
}

impl LatentGenerator for RandomModel {
    fn latent_dim(&self) -> usize {
        self.m
    }

    fn generate(&self, z: ArrayView2<f64>) -> Result<ImageBatch> {
        let mut data = Vec::with_capacity(z.nrows() * self.pixels);
        for row in z.rows() {
            for p in 0..self.pixels {
                let mut s = 0.0;
                for d in 0..self.m {
                    s += row[d] * self.w[[d, p]];
                }
                data.push((1.0 / (1.0 + (-s).exp())) as f32);
            }
        }
        ImageBatch::new(z.nrows(), 1, 1, self.pixels, data)
    }
}

impl FactorClassifier for RandomModel {
    fn factor_names(&self) -> Vec<String> {
        (0..self.heads.len()).map(|i| format!("g{i}")).collect()
    }

    fn cardinalities(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.ncols()).collect()
    }

    fn predict_proba(&self, images: &ImageBatch) -> Result<Vec<Array2<f64>>> {
        Ok(self
            .heads
            .iter()
            .map(|h| {
                let k = h.ncols();
                let mut out = Array2::zeros((images.len, k));
                for b in 0..images.len {
                    let img = images.image(b);
                    let logits: Vec<f64> = (0..k)
                        .map(|v| (0..self.pixels).map(|p| img[p] as f64 * h[[p, v]]).sum())
                        .collect();
                    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = logits.iter().map(|v| (v - mx).exp()).sum();
                    for v in 0..k {
                        out[[b, v]] = (logits[v] - mx).exp() / z;
                    }
                }
                out
            })
            .collect())
    }

    fn validation_accuracy(&self) -> Vec<f64> {
        vec![1.0; self.heads.len()]
    }
}

/// Random fixture: codes, labels (every value appears at least twice) and latent sets.
pub fn random_fixture(seed: u64) -> (Array2<f64>, Array2<usize>, Vec<usize>, Vec<BTreeSet<usize>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..5);
    let m = rng.gen_range(n..9);
    let l = rng.gen_range(8..24);
    let cards: Vec<usize> = (0..n).map(|_| rng.gen_range(2..4)).collect();
    let codes = Array2::from_shape_fn((l, m), |_| rng.gen_range(-3.0..3.0));
    let labels = Array2::from_shape_fn((l, n), |(r, i)| r % cards[i]);
    let rho = rng.gen_range(1..=m.min(3));
    let sets = (0..n)
        .map(|_| rand::seq::index::sample(&mut rng, m, rho).into_iter().collect())
        .collect();
    (codes, labels, cards, sets)
}

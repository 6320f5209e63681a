//! DCI disentanglement from random-forest feature importances.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::irs::check_inputs;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Records beyond this count are subsampled (same subset for every factor).
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 10,
            max_depth: 6,
            min_samples_split: 2,
            max_samples: 2000,
            seed: 0,
        }
    }
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

struct TreeBuilder<'a, 'v> {
    x: &'a ArrayView2<'v, f64>,
    y: &'a [usize],
    classes: usize,
    cfg: &'a ForestConfig,
    importance: Vec<f64>,
}

impl TreeBuilder<'_, '_> {
    fn grow(&mut self, rows: &mut [usize], depth: usize) {
        let n = rows.len();
        if depth >= self.cfg.max_depth || n < self.cfg.min_samples_split {
            return;
        }
        let mut counts = vec![0usize; self.classes];
        for &r in rows.iter() {
            counts[self.y[r]] += 1;
        }
        let parent = gini(&counts, n);
        if parent == 0.0 {
            return;
        }
        // (gain, feature, threshold)
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = rows.to_vec();
        for f in 0..self.x.ncols() {
            order.sort_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]));
            let mut left = vec![0usize; self.classes];
            let mut right = counts.clone();
            for s in 1..n {
                let moved = self.y[order[s - 1]];
                left[moved] += 1;
                right[moved] -= 1;
                let (lo, hi) = (self.x[[order[s - 1], f]], self.x[[order[s], f]]);
                if lo == hi {
                    continue;
                }
                let gain = n as f64 * parent - s as f64 * gini(&left, s) - (n - s) as f64 * gini(&right, n - s);
                if best.map_or(true, |(g, _, _)| gain > g) {
                    best = Some((gain, f, lo + (hi - lo) / 2.0));
                }
            }
        }
        let Some((gain, f, threshold)) = best else {
            return;
        };
        if gain <= 0.0 {
            return;
        }
        self.importance[f] += gain;
        let split = partition(rows, |r| self.x[[r, f]] <= threshold);
        let (l, r) = rows.split_at_mut(split);
        self.grow(l, depth + 1);
        self.grow(r, depth + 1);
    }
}

fn partition(rows: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut k = 0;
    for i in 0..rows.len() {
        if pred(rows[i]) {
            rows.swap(i, k);
            k += 1;
        }
    }
    k
}

/// Mean normalized impurity-decrease importance of each column for predicting `y`.
pub fn forest_importance(x: ArrayView2<f64>, y: &[usize], cfg: &ForestConfig) -> Vec<f64> {
    let (l, m) = x.dim();
    let classes = y.iter().copied().max().map_or(1, |c| c + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut total = vec![0.0; m];
    for _ in 0..cfg.n_trees {
        let mut rows: Vec<usize> = (0..l).map(|_| rng.gen_range(0..l)).collect();
        let mut b = TreeBuilder {
            x: &x,
            y,
            classes,
            cfg,
            importance: vec![0.0; m],
        };
        b.grow(&mut rows, 0);
        let s: f64 = b.importance.iter().sum();
        if s > 0.0 {
            for (t, v) in total.iter_mut().zip(&b.importance) {
                *t += v / s;
            }
        }
    }
    total.iter().map(|t| t / cfg.n_trees as f64).collect()
}

/// m × n importance matrix (latent × factor).
pub fn dci_importance(
    latents: ArrayView2<f64>,
    labels: ArrayView2<usize>,
    names: &[String],
    cfg: &ForestConfig,
) -> Result<Array2<f64>> {
    check_inputs(&latents, &labels, names)?;
    let l = latents.nrows();
    let rows: Vec<usize> = if l > cfg.max_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
        let mut idx = rand::seq::index::sample(&mut rng, l, cfg.max_samples).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..l).collect()
    };
    let x = latents.select(ndarray::Axis(0), &rows);
    let mut r = Array2::zeros((latents.ncols(), names.len()));
    for i in 0..names.len() {
        let y: Vec<usize> = rows.iter().map(|&row| labels[[row, i]]).collect();
        let imp = forest_importance(x.view(), &y, cfg);
        for (d, v) in imp.into_iter().enumerate() {
            r[[d, i]] = v;
        }
    }
    Ok(r)
}

/// Importance-weighted mean over latents of `1 − H_n(P_d)`, where `P_d` is
/// latent `d`'s importance distribution over the n factors.
pub fn disentanglement_from_importance(r: &Array2<f64>) -> f64 {
    let (m, n) = r.dim();
    let grand: f64 = r.sum();
    if grand <= 0.0 {
        return 0.0;
    }
    let mut score = 0.0;
    for d in 0..m {
        let row_total: f64 = r.row(d).sum();
        if row_total <= 0.0 {
            continue;
        }
        let entropy = if n > 1 {
            -r.row(d)
                .iter()
                .map(|&v| v / row_total)
                .filter(|&p| p > 0.0)
                .map(|p| p * p.ln())
                .sum::<f64>()
                / (n as f64).ln()
        } else {
            0.0
        };
        score += row_total / grand * (1.0 - entropy);
    }
    score.clamp(0.0, 1.0)
}

pub fn compute_dci_d(latents: ArrayView2<f64>, labels: ArrayView2<usize>, names: &[String]) -> Result<f64> {
    compute_dci_d_with(latents, labels, names, &ForestConfig::default())
}

pub fn compute_dci_d_with(
    latents: ArrayView2<f64>,
    labels: ArrayView2<usize>,
    names: &[String],
    cfg: &ForestConfig,
) -> Result<f64> {
    Ok(disentanglement_from_importance(&dci_importance(latents, labels, names, cfg)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_extremes() {
        let one_to_one = ndarray::array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(disentanglement_from_importance(&one_to_one), 1.0);
        let shared = ndarray::array![[0.5, 0.5], [0.5, 0.5]];
        assert!(disentanglement_from_importance(&shared).abs() < 1e-15);
        assert_eq!(disentanglement_from_importance(&Array2::zeros((2, 2))), 0.0);
    }

    #[test]
    fn forest_finds_the_informative_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = 200;
        let y: Vec<usize> = (0..l).map(|i| i % 3).collect();
        let x = Array2::from_shape_fn((l, 3), |(r, c)| if c == 1 { y[r] as f64 } else { rng.gen::<f64>() });
        let imp = forest_importance(x.view(), &y, &ForestConfig::default());
        assert!(imp[1] > 0.9, "{imp:?}");
    }
}

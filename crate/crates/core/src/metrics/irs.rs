//! Interventional robustness attribution (scalable estimator).
//!
//! For latent `d` and factor `i`, the deviation of `d` from its mean within
//! each value group of `i` (99th percentile of absolute deviations) is
//! averaged over the values and normalized by the largest deviation of `d`
//! over the dataset. Robustness is one minus that ratio.

use std::collections::BTreeSet;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DIFF_QUANTILE: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorLatentMap {
    pub factors: Vec<String>,
    /// `entries[i]` holds the ρ latent indices attributed to `factors[i]`.
    pub entries: Vec<BTreeSet<usize>>,
    pub rho: usize,
    /// n × m attribution scores in [0, 1].
    pub importance: Vec<Vec<f64>>,
    /// Largest absolute deviation from the mean, per latent.
    pub max_deviation: Vec<f64>,
}

impl FactorLatentMap {
    pub fn latent_dim(&self) -> usize {
        self.max_deviation.len()
    }

    pub fn entry(&self, factor: &str) -> Option<&BTreeSet<usize>> {
        self.factors.iter().position(|f| f == factor).map(|i| &self.entries[i])
    }

    /// Complement of `entries[i]` in `0..m`, ascending.
    pub fn complement(&self, i: usize) -> Vec<usize> {
        (0..self.latent_dim()).filter(|d| !self.entries[i].contains(d)).collect()
    }

    /// Same attribution with a different ρ.
    pub fn with_rho(&self, rho: usize) -> Result<Self> {
        let entries = self
            .importance
            .iter()
            .map(|row| top_k(row, rho))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            entries,
            rho,
            ..self.clone()
        })
    }

    /// Importance-weighted robustness of the latents selected by any factor.
    pub fn selected_score(&self) -> f64 {
        let selected: BTreeSet<usize> = self.entries.iter().flatten().copied().collect();
        let (mut num, mut den, mut plain) = (0.0, 0.0, 0.0);
        for &d in &selected {
            let best = self.importance.iter().map(|row| row[d]).fold(0.0, f64::max);
            num += self.max_deviation[d] * best;
            den += self.max_deviation[d];
            plain += best;
        }
        if selected.is_empty() {
            0.0
        } else if den > 0.0 {
            num / den
        } else {
            plain / selected.len() as f64
        }
    }
}

/// Indices of the `k` largest scores; ties go to the lower index.
fn top_k(scores: &[f64], k: usize) -> Result<BTreeSet<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::Config(format!(
            "rho must lie in 1..={}, got {k}",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(order.into_iter().take(k).collect())
}

/// Linear-interpolation quantile of an unsorted sample.
pub fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    values[lo] + (values[hi] - values[lo]) * frac
}

/// Value indices present for one factor column, ascending.
pub(crate) fn distinct_values(labels: &ArrayView2<usize>, i: usize) -> Vec<usize> {
    let set: BTreeSet<usize> = labels.column(i).iter().copied().collect();
    set.into_iter().collect()
}

pub(crate) fn check_inputs(latents: &ArrayView2<f64>, labels: &ArrayView2<usize>, names: &[String]) -> Result<()> {
    if latents.nrows() != labels.nrows() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} label rows", latents.nrows()),
            got: labels.nrows().to_string(),
        });
    }
    if names.len() != labels.ncols() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} factor names", labels.ncols()),
            got: names.len().to_string(),
        });
    }
    if latents.ncols() == 0 || labels.ncols() == 0 {
        return Err(Error::InsufficientData("need at least one latent and one factor".into()));
    }
    if let Some(bad) = latents.iter().find(|v| !v.is_finite()) {
        return Err(Error::InsufficientData(format!("non-finite latent value {bad}")));
    }
    for (i, name) in names.iter().enumerate() {
        if distinct_values(labels, i).len() < 2 {
            return Err(Error::UndefinedFactor(name.clone()));
        }
    }
    Ok(())
}

/// Attribution of latents to factors and the IRS score of the top-ρ selection.
pub fn compute_irs(
    latents: ArrayView2<f64>,
    labels: ArrayView2<usize>,
    names: &[String],
    rho: usize,
) -> Result<(f64, FactorLatentMap)> {
    check_inputs(&latents, &labels, names)?;
    let (l, m) = latents.dim();
    let mean = latents.mean_axis(Axis(0)).expect("non-empty");
    let max_deviation: Vec<f64> = (0..m)
        .map(|d| latents.column(d).iter().map(|v| (v - mean[d]).abs()).fold(0.0, f64::max))
        .collect();

    let mut importance = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let column = labels.column(i);
        let values = distinct_values(&labels, i);
        let mut cum = vec![0.0; m];
        for &v in &values {
            let rows: Vec<usize> = (0..l).filter(|&r| column[r] == v).collect();
            if rows.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "factor `{name}` value {v} has {} record(s); need at least 2",
                    rows.len()
                )));
            }
            let mut buf = Vec::with_capacity(rows.len());
            for (d, acc) in cum.iter_mut().enumerate() {
                let e_loc = rows.iter().map(|&r| latents[[r, d]]).sum::<f64>() / rows.len() as f64;
                buf.clear();
                buf.extend(rows.iter().map(|&r| (latents[[r, d]] - e_loc).abs()));
                *acc += quantile(&mut buf, DIFF_QUANTILE);
            }
        }
        let row = cum
            .iter()
            .zip(&max_deviation)
            .map(|(c, &md)| {
                if md > 0.0 {
                    (1.0 - c / values.len() as f64 / md).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        importance.push(row);
    }
    let entries = importance
        .iter()
        .map(|row: &Vec<f64>| top_k(row, rho))
        .collect::<Result<Vec<_>>>()?;
    let map = FactorLatentMap {
        factors: names.to_vec(),
        entries,
        rho,
        importance,
        max_deviation,
    };
    Ok((map.selected_score(), map))
}

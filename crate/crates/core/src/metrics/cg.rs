//! Counterfactual generativeness.
//!
//! For every record and factor, the latents attributed to the factor (and,
//! separately, all remaining latents) are set to a baseline and decoded. The
//! change in the oracle's probability of the record's true factor value is
//! the individual causal effect of that latent set.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::irs::FactorLatentMap;
use crate::batch::ImageBatch;
use crate::error::{Error, Result};

/// A decoder from latent points to images.
pub trait LatentGenerator {
    fn latent_dim(&self) -> usize;
    /// Decodes every row of `z` (B × m) into one image.
    fn generate(&self, z: ArrayView2<f64>) -> Result<ImageBatch>;
}

/// Per-factor class probabilities for images.
pub trait FactorClassifier {
    fn factor_names(&self) -> Vec<String>;
    fn cardinalities(&self) -> Vec<usize>;
    /// One B × K_i probability matrix per factor, in factor order.
    fn predict_proba(&self, images: &ImageBatch) -> Result<Vec<Array2<f64>>>;
    /// Held-out accuracy per factor, in factor order.
    fn validation_accuracy(&self) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    #[default]
    MaxDev,
    Zero,
    Mean,
}

impl std::str::FromStr for BaselineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max-dev" => Ok(Self::MaxDev),
            "zero" => Ok(Self::Zero),
            "mean" => Ok(Self::Mean),
            other => Err(Error::Config(format!("unknown baseline mode `{other}`"))),
        }
    }
}

/// Where the absolute value sits when averaging ICE differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CgAggregation {
    /// `(1/L) Σ_x |ICE_in − ICE_out|` per factor (per-image accumulation).
    #[default]
    PerImage,
    /// `|(1/L) Σ_x (ICE_in − ICE_out)|` per factor.
    SignedMean,
}

/// Minimum held-out accuracy the oracle must reach on each factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleGate {
    pub floor: f64,
    #[serde(default)]
    pub per_factor: BTreeMap<String, f64>,
}

impl Default for OracleGate {
    fn default() -> Self {
        Self {
            floor: 0.9,
            per_factor: BTreeMap::new(),
        }
    }
}

impl OracleGate {
    pub fn open() -> Self {
        Self {
            floor: 0.0,
            per_factor: BTreeMap::new(),
        }
    }

    pub fn floor_for(&self, factor: &str) -> f64 {
        self.per_factor.get(factor).copied().unwrap_or(self.floor)
    }

    pub fn check(&self, names: &[String], accuracy: &[f64]) -> Result<()> {
        for (name, &acc) in names.iter().zip(accuracy) {
            let floor = self.floor_for(name);
            if !(acc >= floor) {
                return Err(Error::InvalidOracle {
                    factor: name.clone(),
                    accuracy: acc,
                    floor,
                });
            }
        }
        Ok(())
    }
}

/// Per-dimension extremes and mean over the dataset codes.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
}

impl BaselineStats {
    pub fn from_codes(codes: ArrayView2<f64>) -> Result<Self> {
        let (l, m) = codes.dim();
        if l == 0 {
            return Err(Error::InsufficientData("no latent codes".into()));
        }
        let mut min = vec![f64::INFINITY; m];
        let mut max = vec![f64::NEG_INFINITY; m];
        let mut sum = vec![0.0; m];
        for row in codes.rows() {
            for (d, &v) in row.iter().enumerate() {
                min[d] = min[d].min(v);
                max[d] = max[d].max(v);
                sum[d] += v;
            }
        }
        let mean = sum.into_iter().map(|s| s / l as f64).collect();
        Ok(Self { min, max, mean })
    }

    pub fn value(&self, d: usize, current: f64, mode: BaselineMode) -> f64 {
        match mode {
            BaselineMode::Zero => 0.0,
            BaselineMode::Mean => self.mean[d],
            BaselineMode::MaxDev => {
                let (lo, hi) = (self.min[d], self.max[d]);
                if (hi - current).abs() >= (lo - current).abs() {
                    hi
                } else {
                    lo
                }
            }
        }
    }

    /// Copy of `z` with every dimension in `dims` replaced by its baseline.
    pub fn intervene(&self, z: &[f64], dims: &[usize], mode: BaselineMode) -> Vec<f64> {
        let mut out = z.to_vec();
        for &d in dims {
            out[d] = self.value(d, z[d], mode);
        }
        out
    }
}

/// Baseline values for the dimensions `dims` of the current point `current`.
pub fn baseline_latents(codes: ArrayView2<f64>, dims: &[usize], current: &[f64], mode: BaselineMode) -> Result<Vec<f64>> {
    let stats = BaselineStats::from_codes(codes)?;
    Ok(dims.iter().map(|&d| stats.value(d, current[d], mode)).collect())
}

fn ice_for_dims<G: LatentGenerator + ?Sized, C: FactorClassifier + ?Sized>(
    model: &G,
    classifier: &C,
    z: &[f64],
    stats: &BaselineStats,
    dims: &[usize],
    factor: usize,
    value: usize,
    mode: BaselineMode,
) -> Result<f64> {
    let treated = stats.intervene(z, dims, mode);
    let m = z.len();
    let mut rows = Vec::with_capacity(2 * m);
    rows.extend_from_slice(z);
    rows.extend_from_slice(&treated);
    let batch = Array2::from_shape_vec((2, m), rows).expect("two rows");
    let images = model.generate(batch.view())?;
    let probs = classifier.predict_proba(&images)?;
    let p = &probs[factor];
    Ok((p[[0, value]] - p[[1, value]]).abs())
}

/// Effect on factor `i`'s true value `k` of moving the factor's own latents to baseline.
#[allow(clippy::too_many_arguments)]
pub fn ice_in_set<G: LatentGenerator + ?Sized, C: FactorClassifier + ?Sized>(
    model: &G,
    classifier: &C,
    z: &[f64],
    stats: &BaselineStats,
    map: &FactorLatentMap,
    i: usize,
    k: usize,
    mode: BaselineMode,
) -> Result<f64> {
    let dims: Vec<usize> = map.entries[i].iter().copied().collect();
    ice_for_dims(model, classifier, z, stats, &dims, i, k, mode)
}

/// Effect on factor `i`'s true value `k` of moving every other latent to baseline.
#[allow(clippy::too_many_arguments)]
pub fn ice_out_set<G: LatentGenerator + ?Sized, C: FactorClassifier + ?Sized>(
    model: &G,
    classifier: &C,
    z: &[f64],
    stats: &BaselineStats,
    map: &FactorLatentMap,
    i: usize,
    k: usize,
    mode: BaselineMode,
) -> Result<f64> {
    ice_for_dims(model, classifier, z, stats, &map.complement(i), i, k, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgOptions {
    pub baseline: BaselineMode,
    pub aggregation: CgAggregation,
    /// Records decoded per generator call (each record expands to 1 + 2n images).
    pub batch_records: usize,
    pub gate: OracleGate,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            baseline: BaselineMode::MaxDev,
            aggregation: CgAggregation::PerImage,
            batch_records: 16,
            gate: OracleGate::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgResult {
    pub cg: f64,
    pub per_factor: Vec<f64>,
    /// L × n individual effects of the attributed latents.
    pub ice_in: Array2<f64>,
    /// L × n individual effects of the remaining latents.
    pub ice_out: Array2<f64>,
}

impl CgResult {
    pub fn mean_ice_in(&self) -> Vec<f64> {
        column_means(&self.ice_in)
    }

    pub fn mean_ice_out(&self) -> Vec<f64> {
        column_means(&self.ice_out)
    }
}

fn column_means(a: &Array2<f64>) -> Vec<f64> {
    a.columns().into_iter().map(|c| c.sum() / c.len() as f64).collect()
}

/// Reduces per-record effects to the CG score; records in order, then factors in order.
pub fn aggregate_cg(ice_in: &Array2<f64>, ice_out: &Array2<f64>, aggregation: CgAggregation) -> (f64, Vec<f64>) {
    let (l, n) = ice_in.dim();
    let mut per_factor = Vec::with_capacity(n);
    for i in 0..n {
        let mut ace = 0.0;
        for x in 0..l {
            match aggregation {
                CgAggregation::PerImage => ace += (ice_in[[x, i]] - ice_out[[x, i]]).abs(),
                CgAggregation::SignedMean => ace += ice_in[[x, i]] - ice_out[[x, i]],
            }
        }
        per_factor.push(match aggregation {
            CgAggregation::PerImage => ace / l as f64,
            CgAggregation::SignedMean => (ace / l as f64).abs(),
        });
    }
    let mut cg = 0.0;
    for v in &per_factor {
        cg += v;
    }
    (cg / n as f64, per_factor)
}

pub fn compute_cg<G: LatentGenerator + ?Sized, C: FactorClassifier + ?Sized>(
    model: &G,
    classifier: &C,
    codes: ArrayView2<f64>,
    labels: ArrayView2<usize>,
    map: &FactorLatentMap,
    opts: &CgOptions,
) -> Result<CgResult> {
    let rows: Vec<usize> = (0..codes.nrows()).collect();
    compute_cg_on(model, classifier, codes, labels, map, opts, &rows)
}

/// CG averaged over the records `rows` only. Baselines are still taken over
/// every code in `codes`.
pub fn compute_cg_on<G: LatentGenerator + ?Sized, C: FactorClassifier + ?Sized>(
    model: &G,
    classifier: &C,
    codes: ArrayView2<f64>,
    labels: ArrayView2<usize>,
    map: &FactorLatentMap,
    opts: &CgOptions,
    rows: &[usize],
) -> Result<CgResult> {
    let (total, m) = codes.dim();
    let l = rows.len();
    let n = map.factors.len();
    if l == 0 {
        return Err(Error::InsufficientData("empty manifest".into()));
    }
    if m != model.latent_dim() || m != map.latent_dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} latent dims", model.latent_dim()),
            got: format!("codes {m}, map {}", map.latent_dim()),
        });
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= total) {
        return Err(Error::ShapeMismatch {
            expected: format!("record indices below {total}"),
            got: bad.to_string(),
        });
    }
    if labels.dim() != (total, n) || classifier.cardinalities().len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{total}×{n} labels and {n} classifier heads"),
            got: format!("{:?} labels, {} heads", labels.dim(), classifier.cardinalities().len()),
        });
    }
    if classifier.factor_names() != map.factors {
        return Err(Error::Schema(format!(
            "classifier factors {:?} differ from map factors {:?}",
            classifier.factor_names(),
            map.factors
        )));
    }
    opts.gate.check(&map.factors, &classifier.validation_accuracy())?;

    let stats = BaselineStats::from_codes(codes)?;
    let in_sets: Vec<Vec<usize>> = map.entries.iter().map(|s| s.iter().copied().collect()).collect();
    let out_sets: Vec<Vec<usize>> = (0..n).map(|i| map.complement(i)).collect();
    let per_record = 1 + 2 * n;
    let chunk = opts.batch_records.max(1);

    let mut ice_in = Array2::zeros((l, n));
    let mut ice_out = Array2::zeros((l, n));
    let mut start = 0;
    while start < l {
        let end = (start + chunk).min(l);
        let mut z = Array2::zeros(((end - start) * per_record, m));
        for x in start..end {
            let base = (x - start) * per_record;
            let current: Vec<f64> = codes.row(rows[x]).to_vec();
            z.row_mut(base).assign(&ndarray::aview1(&current));
            for i in 0..n {
                let zin = stats.intervene(&current, &in_sets[i], opts.baseline);
                let zout = stats.intervene(&current, &out_sets[i], opts.baseline);
                z.row_mut(base + 1 + 2 * i).assign(&ndarray::aview1(&zin));
                z.row_mut(base + 2 + 2 * i).assign(&ndarray::aview1(&zout));
            }
        }
        let images = model.generate(z.view())?;
        let probs = classifier.predict_proba(&images)?;
        for x in start..end {
            let base = (x - start) * per_record;
            for i in 0..n {
                let k = labels[[rows[x], i]];
                let p = &probs[i];
                ice_in[[x, i]] = (p[[base, k]] - p[[base + 1 + 2 * i, k]]).abs();
                ice_out[[x, i]] = (p[[base, k]] - p[[base + 2 + 2 * i, k]]).abs();
            }
        }
        start = end;
    }
    let (cg, per_factor) = aggregate_cg(&ice_in, &ice_out, opts.aggregation);
    Ok(CgResult {
        cg,
        per_factor,
        ice_in,
        ice_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_dev_picks_the_farther_extreme() {
        let codes = ndarray::array![[0.0, 5.0], [2.0, -1.0], [10.0, 1.0]];
        let s = BaselineStats::from_codes(codes.view()).unwrap();
        assert_eq!(s.value(0, 0.0, BaselineMode::MaxDev), 10.0);
        assert_eq!(s.value(0, 10.0, BaselineMode::MaxDev), 0.0);
        assert_eq!(s.value(0, 5.0, BaselineMode::MaxDev), 10.0);
        assert_eq!(s.value(1, 2.0, BaselineMode::Zero), 0.0);
        assert_eq!(s.value(1, 2.0, BaselineMode::Mean), 5.0 / 3.0);
        assert_eq!(
            baseline_latents(codes.view(), &[0, 1], &[0.0, 5.0], BaselineMode::MaxDev).unwrap(),
            vec![10.0, -1.0]
        );
    }

    #[test]
    fn empty_codes_are_rejected() {
        let codes = Array2::<f64>::zeros((0, 3));
        assert!(baseline_latents(codes.view(), &[0], &[0.0; 3], BaselineMode::Zero).is_err());
    }

    #[test]
    fn aggregation_modes_differ_only_in_abs_placement() {
        let ice_in = ndarray::array![[1.0, 0.2], [0.0, 0.2]];
        let ice_out = ndarray::array![[0.0, 0.4], [1.0, 0.0]];
        let (per_image, _) = aggregate_cg(&ice_in, &ice_out, CgAggregation::PerImage);
        let (signed, _) = aggregate_cg(&ice_in, &ice_out, CgAggregation::SignedMean);
        // factor 0: |1|,|−1| → 1 vs |0| → 0; factor 1: 0.2,0.2 → 0.2 vs |0| → 0
        assert!((per_image - 0.6).abs() < 1e-12);
        assert!(signed.abs() < 1e-12);
    }

    #[test]
    fn gate_rejects_weak_oracles() {
        let mut gate = OracleGate::default();
        let names = vec!["a".to_string(), "b".to_string()];
        assert!(gate.check(&names, &[0.95, 0.91]).is_ok());
        assert!(matches!(gate.check(&names, &[0.95, 0.5]), Err(Error::InvalidOracle { .. })));
        gate.per_factor.insert("b".into(), 0.4);
        assert!(gate.check(&names, &[0.95, 0.5]).is_ok());
        assert!(gate.check(&names, &[f64::NAN, 0.5]).is_err());
    }
}

//! Causal disentanglement metrics.

pub mod cg;
pub mod dci;
pub mod export;
pub mod irs;
pub mod uc;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use cg::{
    aggregate_cg, baseline_latents, compute_cg, compute_cg_on, ice_in_set, ice_out_set, BaselineMode, BaselineStats, CgAggregation,
    CgOptions, CgResult, FactorClassifier, LatentGenerator, OracleGate,
};
pub use dci::{compute_dci_d, compute_dci_d_with, ForestConfig};
pub use irs::{compute_irs, FactorLatentMap};
pub use uc::{compute_uc, jaccard, uc_from_sets};

use crate::error::{Error, Result};

/// Hashes of every input a report was computed from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_hash: String,
    pub classifier_hash: String,
    pub dataset_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub variant: String,
    /// IRS of the ρ = 1 attribution.
    pub irs: f64,
    /// Absent when the run did not request DCI-D.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dci_d: Option<f64>,
    pub uc: BTreeMap<usize, f64>,
    pub cg: BTreeMap<usize, f64>,
    /// Factor → latent attributions per ρ.
    #[serde(default)]
    pub maps: BTreeMap<usize, Vec<Vec<usize>>>,
    pub provenance: Provenance,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        let scores = [("irs", self.irs)]
            .into_iter()
            .chain(self.dci_d.map(|v| ("dci_d", v)))
            .chain(self.uc.values().map(|&v| ("uc", v)))
            .chain(self.cg.values().map(|&v| ("cg", v)));
        for (name, v) in scores {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Schema(format!("{name} score {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}

//! Match and rank pairing for weak supervision.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    Match,
    Rank,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingQuery {
    pub mode: PairMode,
    pub factors: Vec<String>,
    #[serde(default)]
    pub rank_factor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordPair {
    pub a: String,
    pub b: String,
    /// Rank mode only: whether `a` has the larger rank-factor value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_larger: Option<bool>,
}

/// Draws `k` pairs (with replacement across draws) sharing the query's factor values.
pub fn query_pairs(manifest: &DatasetManifest, q: &PairingQuery, k: usize, seed: u64) -> Result<Vec<RecordPair>> {
    if k == 0 {
        return Err(Error::Config("pair count must be at least 1".into()));
    }
    let graph = &manifest.graph;
    for f in &q.factors {
        graph.factor_index(f)?;
    }
    let rank_factor = match (q.mode, &q.rank_factor) {
        (PairMode::Match, _) => None,
        (PairMode::Rank, None) => return Err(Error::Config("rank pairing needs a rank factor".into())),
        (PairMode::Rank, Some(name)) => {
            let spec = graph
                .factor(name)
                .ok_or_else(|| Error::Schema(format!("unknown factor `{name}`")))?;
            if !spec.ordered {
                return Err(Error::Config(format!("factor `{name}` has no declared order")));
            }
            Some(spec)
        }
    };
    let match_on: Vec<&str> = q
        .factors
        .iter()
        .map(String::as_str)
        .filter(|f| rank_factor.map_or(true, |r| r.name != *f))
        .collect();

    let rank_of = |i: usize| -> usize {
        let spec = rank_factor.expect("rank mode");
        let value = manifest.records[i].assignment.get(&spec.name).unwrap_or_default();
        spec.index_of(value).unwrap_or(0)
    };

    let mut groups: BTreeMap<Vec<&str>, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        let key = match_on.iter().map(|f| r.assignment.get(f).unwrap_or_default()).collect();
        groups.entry(key).or_default().push(i);
    }
    let eligible: Vec<Vec<usize>> = groups
        .into_values()
        .filter(|members| match rank_factor {
            None => members.len() >= 2,
            Some(_) => members.iter().any(|&m| rank_of(m) != rank_of(members[0])),
        })
        .collect();
    if eligible.is_empty() {
        return Ok(Vec::new());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let members = eligible.choose(&mut rng).expect("non-empty");
        let a = *members.choose(&mut rng).expect("non-empty");
        let partners: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&b| b != a && rank_factor.map_or(true, |_| rank_of(b) != rank_of(a)))
            .collect();
        let b = partners[rng.gen_range(0..partners.len())];
        out.push(RecordPair {
            a: manifest.records[a].id.clone(),
            b: manifest.records[b].id.clone(),
            a_larger: rank_factor.map(|_| rank_of(a) > rank_of(b)),
        });
    }
    Ok(out)
}

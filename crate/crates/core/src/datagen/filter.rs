//! Confounded sub-sampling: keep only records matching a conditioning.

use serde::{Deserialize, Serialize};

use super::DatasetManifest;
use crate::error::{Error, Result};
use crate::scm::{CausalGraphSpec, FactorAssignment, Predicate};

/// A record is kept when every predicate of the rule holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeepRule {
    #[serde(default)]
    pub require: Vec<Predicate>,
    #[serde(default)]
    pub label: String,
}

impl KeepRule {
    pub fn holds(&self, assignment: &FactorAssignment) -> bool {
        self.require.iter().all(|p| {
            assignment
                .get(&p.factor)
                .is_some_and(|v| p.values.iter().any(|x| x == v))
        })
    }
}

/// Disjunction of keep rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conditioning {
    pub keep: Vec<KeepRule>,
}

impl Conditioning {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn validate(&self, graph: &CausalGraphSpec) -> Result<()> {
        for rule in &self.keep {
            for p in &rule.require {
                let spec = graph
                    .factor(&p.factor)
                    .ok_or_else(|| Error::Schema(format!("conditioning names unknown factor `{}`", p.factor)))?;
                if let Some(v) = p.values.iter().find(|v| spec.index_of(v).is_none()) {
                    return Err(Error::Schema(format!(
                        "conditioning names unknown value `{v}` of factor `{}`",
                        p.factor
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn admits(&self, assignment: &FactorAssignment) -> bool {
        self.keep.iter().any(|r| r.holds(assignment))
    }

    pub fn describe(&self) -> String {
        let labels: Vec<_> = self.keep.iter().map(|r| r.label.as_str()).collect();
        format!("keep[{}]", labels.join("|"))
    }
}

/// Sub-manifest of the records whose assignments satisfy `conditioning`.
pub fn apply_confounded_filter(manifest: &DatasetManifest, conditioning: &Conditioning) -> Result<DatasetManifest> {
    conditioning.validate(&manifest.graph)?;
    let records: Vec<_> = manifest
        .records
        .iter()
        .filter(|r| conditioning.admits(&r.assignment))
        .cloned()
        .collect();
    if records.is_empty() {
        return Err(Error::EmptyFilter);
    }
    let mut out = manifest.clone();
    if records.len() != manifest.records.len() {
        out.filters.push(conditioning.describe());
    }
    out.records = records;
    Ok(out)
}

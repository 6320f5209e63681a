//! Two-level causal generative process: confounders act on generative
//! factors, factors act on the image, and factors never act on each other.
//!
//! Observed confounding is stored extensionally as [`ConstraintRule`]s that
//! forbid factor-value combinations. Unobserved confounding is a list of
//! [`NuisanceSpec`]s that the renderers realize in pixels only.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper bound on the size of the full Cartesian product that
/// [`enumerate_valid_assignments`] is willing to walk.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

/// Rejection attempts before falling back to an exhaustive satisfiability check.
const REJECTION_PROBE: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    pub values: Vec<String>,
    /// Values are listed in increasing order and may be ranked against each other.
    #[serde(default)]
    pub ordered: bool,
}

impl FactorSpec {
    pub fn new(name: &str, values: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            values: values.iter().map(|v| v.to_string()).collect(),
            ordered: false,
        }
    }

    pub fn ordered(mut self) -> Self {
        self.ordered = true;
        self
    }

    pub fn cardinality(&self) -> usize {
        self.values.len()
    }

    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }
}

/// One conjunct of a rule: "factor takes one of these values".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub factor: String,
    pub values: Vec<String>,
}

impl Predicate {
    pub fn new(factor: &str, values: &[&str]) -> Self {
        Self {
            factor: factor.to_string(),
            values: values.iter().map(|v| v.to_string()).collect(),
        }
    }
}

/// A forbidden combination: an assignment violates the rule when every
/// predicate in `forbidden` holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintRule {
    pub forbidden: Vec<Predicate>,
    #[serde(default)]
    pub reason: String,
}

impl ConstraintRule {
    pub fn new(forbidden: Vec<Predicate>, reason: &str) -> Self {
        Self {
            forbidden,
            reason: reason.to_string(),
        }
    }
}

/// A renderer-level perturbation that is never written to labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NuisanceSpec {
    pub name: String,
    pub effect: String,
}

impl NuisanceSpec {
    pub fn new(name: &str, effect: &str) -> Self {
        Self {
            name: name.to_string(),
            effect: effect.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalGraphSpec {
    pub factors: Vec<FactorSpec>,
    #[serde(default)]
    pub observed_rules: Vec<ConstraintRule>,
    #[serde(default)]
    pub nuisance: Vec<NuisanceSpec>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactorAssignment {
    pub values: BTreeMap<String, String>,
    pub seed: u64,
}

impl FactorAssignment {
    pub fn get(&self, factor: &str) -> Option<&str> {
        self.values.get(factor).map(String::as_str)
    }
}

/// Rules lowered to factor/value indices for fast repeated checks.
#[derive(Debug, Clone)]
pub struct CompiledRules {
    rules: Vec<Vec<(usize, Vec<bool>)>>,
}

impl CompiledRules {
    /// Index of the first rule whose conjunction holds, if any.
    pub fn first_violation(&self, indices: &[usize]) -> Option<usize> {
        self.rules
            .iter()
            .position(|conj| conj.iter().all(|(f, allowed)| allowed[indices[*f]]))
    }

    pub fn admits(&self, indices: &[usize]) -> bool {
        self.first_violation(indices).is_none()
    }
}

impl CausalGraphSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let graph: Self = toml::from_str(text)?;
        graph.validate()?;
        Ok(graph)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("graph specs always serialize")
    }

    pub fn factor_names(&self) -> Vec<&str> {
        self.factors.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn factor(&self, name: &str) -> Option<&FactorSpec> {
        self.factors.iter().find(|f| f.name == name)
    }

    pub fn factor_index(&self, name: &str) -> Result<usize> {
        self.factors
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::Schema(format!("unknown factor `{name}`")))
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.factors.iter().map(FactorSpec::cardinality).collect()
    }

    /// SHA-256 over the factor names and value lists (rules excluded).
    pub fn schema_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(&self.factors).expect("factor specs serialize");
        hex::encode(Sha256::digest(json))
    }

    pub fn product_size(&self) -> u128 {
        self.factors
            .iter()
            .map(|f| f.cardinality() as u128)
            .product()
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for f in &self.factors {
            if !names.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate factor `{}`", f.name)));
            }
            if f.cardinality() < 2 {
                return Err(Error::Schema(format!(
                    "factor `{}` needs at least two values",
                    f.name
                )));
            }
            let distinct: HashSet<_> = f.values.iter().collect();
            if distinct.len() != f.values.len() {
                return Err(Error::Schema(format!(
                    "factor `{}` repeats a value",
                    f.name
                )));
            }
        }
        for rule in &self.observed_rules {
            let mut seen = HashSet::new();
            for p in &rule.forbidden {
                let spec = self
                    .factor(&p.factor)
                    .ok_or_else(|| Error::Schema(format!("rule names unknown factor `{}`", p.factor)))?;
                for v in &p.values {
                    if spec.index_of(v).is_none() {
                        return Err(Error::Schema(format!(
                            "rule names unknown value `{v}` of factor `{}`",
                            p.factor
                        )));
                    }
                }
                seen.insert(p.factor.as_str());
            }
            if seen.len() < 2 {
                return Err(Error::Schema(format!(
                    "rule `{}` must span at least two factors",
                    rule.reason
                )));
            }
        }
        Ok(())
    }

    pub fn compile_rules(&self) -> Result<CompiledRules> {
        let mut rules = Vec::with_capacity(self.observed_rules.len());
        for rule in &self.observed_rules {
            // Predicates on the same factor intersect.
            let mut conj: Vec<(usize, Vec<bool>)> = Vec::new();
            for p in &rule.forbidden {
                let fi = self.factor_index(&p.factor)?;
                let spec = &self.factors[fi];
                let mut allowed = vec![false; spec.cardinality()];
                for v in &p.values {
                    let vi = spec.index_of(v).ok_or_else(|| {
                        Error::Schema(format!("unknown value `{v}` of factor `{}`", spec.name))
                    })?;
                    allowed[vi] = true;
                }
                match conj.iter_mut().find(|(f, _)| *f == fi) {
                    Some((_, existing)) => {
                        for (e, a) in existing.iter_mut().zip(allowed) {
                            *e = *e && a;
                        }
                    }
                    None => conj.push((fi, allowed)),
                }
            }
            rules.push(conj);
        }
        Ok(CompiledRules { rules })
    }

    /// Value indices of `assignment` in factor declaration order.
    pub fn resolve(&self, assignment: &FactorAssignment) -> Result<Vec<usize>> {
        if assignment.values.len() != self.factors.len() {
            for name in assignment.values.keys() {
                self.factor_index(name)?;
            }
            let missing: Vec<_> = self
                .factors
                .iter()
                .filter(|f| !assignment.values.contains_key(&f.name))
                .map(|f| f.name.clone())
                .collect();
            return Err(Error::Schema(format!("assignment misses factors {missing:?}")));
        }
        self.factors
            .iter()
            .map(|f| {
                let v = assignment
                    .get(&f.name)
                    .ok_or_else(|| Error::Schema(format!("assignment misses factor `{}`", f.name)))?;
                f.index_of(v)
                    .ok_or_else(|| Error::Schema(format!("unknown value `{v}` of factor `{}`", f.name)))
            })
            .collect()
    }

    pub fn assignment_from_indices(&self, indices: &[usize], seed: u64) -> FactorAssignment {
        let values = self
            .factors
            .iter()
            .zip(indices)
            .map(|(f, &i)| (f.name.clone(), f.values[i].clone()))
            .collect();
        FactorAssignment { values, seed }
    }

    /// Reason text of the first violated rule, if any.
    pub fn violated_rule(&self, assignment: &FactorAssignment) -> Result<Option<&ConstraintRule>> {
        let idx = self.resolve(assignment)?;
        let compiled = self.compile_rules()?;
        Ok(compiled.first_violation(&idx).map(|r| &self.observed_rules[r]))
    }
}

/// True iff no rule's conjunction is fully satisfied by `assignment`.
pub fn check_constraints(assignment: &FactorAssignment, graph: &CausalGraphSpec) -> Result<bool> {
    Ok(graph.violated_rule(assignment)?.is_none())
}

/// Odometer over value indices, last factor fastest.
struct Odometer {
    cards: Vec<usize>,
    current: Option<Vec<usize>>,
}

impl Odometer {
    fn new(cards: Vec<usize>) -> Self {
        let current = if cards.iter().all(|&c| c > 0) {
            Some(vec![0; cards.len()])
        } else {
            None
        };
        Self { cards, current }
    }
}

impl Iterator for Odometer {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let cur = self.current.as_mut().unwrap();
        let mut pos = cur.len();
        loop {
            if pos == 0 {
                self.current = None;
                break;
            }
            pos -= 1;
            cur[pos] += 1;
            if cur[pos] < self.cards[pos] {
                break;
            }
            cur[pos] = 0;
        }
        Some(out)
    }
}

/// Every value-index tuple of the full product, in lexicographic order.
pub fn product_indices(cards: &[usize]) -> impl Iterator<Item = Vec<usize>> {
    Odometer::new(cards.to_vec())
}

/// Seed of the `ordinal`-th record derived from a base seed (splitmix64).
pub fn derive_seed(base: u64, ordinal: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(ordinal.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// All assignments that pass the graph's rules, in lexicographic order of
/// value indices (factor declaration order, last factor fastest).
pub fn enumerate_valid_assignments(graph: &CausalGraphSpec, cap: u128) -> Result<Vec<FactorAssignment>> {
    graph.validate()?;
    let required = graph.product_size();
    if required > cap {
        return Err(Error::Size { required, cap });
    }
    let compiled = graph.compile_rules()?;
    Ok(product_indices(&graph.cardinalities())
        .filter(|idx| compiled.admits(idx))
        .enumerate()
        .map(|(ordinal, idx)| graph.assignment_from_indices(&idx, derive_seed(graph.seed, ordinal as u64)))
        .collect())
}

/// Uniform draw over valid assignments by rejection against the observed rules.
/// Each factor is drawn independently of every other factor's value.
pub fn sample_assignment<R: Rng + ?Sized>(graph: &CausalGraphSpec, rng: &mut R) -> Result<FactorAssignment> {
    let compiled = graph.compile_rules()?;
    let cards = graph.cardinalities();
    let draw = |rng: &mut R| -> Vec<usize> { cards.iter().map(|&c| rng.gen_range(0..c)).collect() };
    for _ in 0..REJECTION_PROBE {
        let idx = draw(rng);
        if compiled.admits(&idx) {
            return Ok(graph.assignment_from_indices(&idx, rng.gen()));
        }
    }
    let any_valid = product_indices(&cards).any(|idx| compiled.admits(&idx));
    if !any_valid {
        return Err(Error::Unsatisfiable);
    }
    loop {
        let idx = draw(rng);
        if compiled.admits(&idx) {
            return Ok(graph.assignment_from_indices(&idx, rng.gen()));
        }
    }
}

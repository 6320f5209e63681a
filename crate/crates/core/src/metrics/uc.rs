//! Unconfoundedness: one minus the mean pairwise Jaccard overlap of the
//! factors' latent sets.

use std::collections::BTreeSet;

use super::irs::FactorLatentMap;
use crate::error::{Error, Result};

/// `|A ∩ B| / |A ∪ B|`, zero when both sets are empty.
pub fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

pub fn compute_uc(map: &FactorLatentMap) -> Result<f64> {
    uc_from_sets(&map.entries)
}

/// Pairs are visited as `i < j` in factor order.
pub fn uc_from_sets(sets: &[BTreeSet<usize>]) -> Result<f64> {
    let n = sets.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "unconfoundedness needs at least two factors, got {n}"
        )));
    }
    let mut t = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            t += jaccard(&sets[i], &sets[j]);
        }
    }
    Ok(1.0 - (2.0 * t) / ((n * (n - 1)) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn worked_example() {
        assert_eq!(jaccard(&s(&[1, 2, 3]), &s(&[2, 3, 6])), 0.5);
        assert_eq!(uc_from_sets(&[s(&[1, 2, 3]), s(&[2, 3, 6])]).unwrap(), 0.5);
    }

    #[test]
    fn extremes() {
        assert_eq!(jaccard(&s(&[]), &s(&[])), 0.0);
        assert_eq!(jaccard(&s(&[4]), &s(&[4])), 1.0);
        assert_eq!(uc_from_sets(&[s(&[0]), s(&[1]), s(&[2])]).unwrap(), 1.0);
        assert_eq!(uc_from_sets(&[s(&[0, 1]), s(&[0, 1]), s(&[0, 1])]).unwrap(), 0.0);
        assert!(uc_from_sets(&[s(&[0])]).is_err());
    }

    #[test]
    fn three_chained_sets() {
        let uc = uc_from_sets(&[s(&[1, 2]), s(&[2, 3]), s(&[3, 4])]).unwrap();
        assert!((uc - 7.0 / 9.0).abs() < 1e-15);
    }
}

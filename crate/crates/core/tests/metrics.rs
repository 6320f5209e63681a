mod oracles;

use std::collections::BTreeSet;

use cdbench_core::metrics::{
    compute_cg, compute_dci_d, compute_irs, compute_uc, jaccard, uc_from_sets, CgOptions, FactorLatentMap,
    LatentGenerator, MetricReport, OracleGate,
};
use cdbench_core::{Error, ImageBatch};
use ndarray::{Array2, ArrayView2};
use oracles::{cg_alg2, irs_importance, random_fixture, uc_alg1, IdentityModel, RandomModel};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn set(v: &[usize]) -> BTreeSet<usize> {
    v.iter().copied().collect()
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("g{i}")).collect()
}

fn map_from_sets(sets: &[BTreeSet<usize>], m: usize) -> FactorLatentMap {
    FactorLatentMap {
        factors: names(sets.len()),
        entries: sets.to_vec(),
        rho: sets[0].len(),
        importance: vec![vec![0.0; m]; sets.len()],
        max_deviation: vec![1.0; m],
    }
}

fn open() -> CgOptions {
    CgOptions {
        gate: OracleGate::open(),
        batch_records: 5,
        ..Default::default()
    }
}

#[test]
fn uc_worked_values() {
    assert_eq!(jaccard(&set(&[1, 2, 3]), &set(&[2, 3, 6])), 0.5);
    let disjoint = [set(&[0, 1]), set(&[2, 3]), set(&[4, 5]), set(&[6])];
    assert_eq!(uc_from_sets(&disjoint).unwrap(), 1.0);
    let same = [set(&[3, 7]), set(&[3, 7]), set(&[3, 7])];
    assert_eq!(uc_from_sets(&same).unwrap(), 0.0);
}

#[test]
fn identity_model_has_perfect_cg() {
    let model = IdentityModel {
        cardinalities: vec![3, 2, 4],
    };
    let (codes, labels) = model.dataset();
    let (irs, map) = compute_irs(codes.view(), labels.view(), &names(3), 1).unwrap();
    assert_eq!(map.entries, vec![set(&[0]), set(&[1]), set(&[2])]);
    assert!(irs > 0.99);
    assert_eq!(compute_uc(&map).unwrap(), 1.0);
    let res = compute_cg(&model, &model, codes.view(), labels.view(), &map, &open()).unwrap();
    assert!((res.cg - 1.0).abs() < 1e-6, "{}", res.cg);
    assert_eq!(res.mean_ice_in(), vec![1.0; 3]);
    assert_eq!(res.mean_ice_out(), vec![0.0; 3]);
}

/// Generator whose output never depends on the latents.
struct Constant;

impl LatentGenerator for Constant {
    fn latent_dim(&self) -> usize {
        4
    }

    fn generate(&self, z: ArrayView2<f64>) -> cdbench_core::Result<ImageBatch> {
        ImageBatch::new(z.nrows(), 1, 1, 6, vec![0.3; z.nrows() * 6])
    }
}

#[test]
fn equal_effects_give_zero_cg() {
    let (codes, labels, cards, _) = random_fixture(3);
    let codes = codes.slice(ndarray::s![.., 0..4]).to_owned();
    let clf = RandomModel::new(4, &cards, 1);
    let sets: Vec<_> = (0..cards.len()).map(|i| set(&[i % 4])).collect();
    let res = compute_cg(&Constant, &clf, codes.view(), labels.view(), &map_from_sets(&sets, 4), &open()).unwrap();
    assert_eq!(res.ice_in, res.ice_out);
    assert_eq!(res.cg, 0.0);
}

#[test]
fn uc_and_cg_match_direct_transcriptions() {
    for seed in 0..120 {
        let (codes, labels, cards, sets) = random_fixture(seed);
        let m = codes.ncols();
        assert_eq!(uc_from_sets(&sets).unwrap().to_bits(), uc_alg1(&sets).to_bits(), "seed {seed}");

        let model = RandomModel::new(m, &cards, seed + 1000);
        let map = map_from_sets(&sets, m);
        let ours = compute_cg(&model, &model, codes.view(), labels.view(), &map, &open()).unwrap();
        let reference = cg_alg2(&model, &model, codes.view(), labels.view(), &sets);
        assert_eq!(ours.cg.to_bits(), reference.to_bits(), "seed {seed}: {} vs {reference}", ours.cg);
    }
}

#[test]
fn irs_matches_reference_importance() {
    for seed in 0..30 {
        let (mut codes, labels, cards, _) = random_fixture(seed);
        // make latent 0 a noisy copy of factor 0 and latent 1 an exact duplicate of it
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for r in 0..codes.nrows() {
            codes[[r, 0]] = labels[[r, 0]] as f64 + rng.gen_range(-0.05..0.05);
            codes[[r, 1]] = codes[[r, 0]];
        }
        let n = cards.len();
        let (_, map) = compute_irs(codes.view(), labels.view(), &names(n), 1).unwrap();
        let reference = irs_importance(codes.view(), labels.view());
        for (a, b) in map.importance.iter().flatten().zip(reference.iter().flatten()) {
            assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
        }
        assert_eq!(map.importance[0][0], map.importance[0][1]);
        assert_eq!(map.entries[0], set(&[0]));
    }
}

#[test]
fn confounded_factors_share_latents() {
    // two factors with identical columns: every attribution coincides
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let l = 60;
    let labels = Array2::from_shape_fn((l, 2), |(r, _)| r % 3);
    let codes = Array2::from_shape_fn((l, 5), |(r, d)| {
        if d == 2 {
            (r % 3) as f64 + rng.gen_range(-0.1..0.1)
        } else {
            rng.gen_range(-1.0..1.0)
        }
    });
    let (irs, map) = compute_irs(codes.view(), labels.view(), &names(2), 1).unwrap();
    assert_eq!(map.entries, vec![set(&[2]), set(&[2])]);
    assert_eq!(compute_uc(&map).unwrap(), 0.0);
    assert!(irs > 0.8);
    assert_eq!(compute_dci_d(codes.view(), labels.view(), &names(2)).unwrap(), 0.0);
}

#[test]
fn weak_oracle_is_refused() {
    let (codes, labels, cards, sets) = random_fixture(1);
    let model = RandomModel::new(codes.ncols(), &cards, 2);
    struct Weak(RandomModel);
    impl cdbench_core::metrics::FactorClassifier for Weak {
        fn factor_names(&self) -> Vec<String> {
            self.0.factor_names()
        }
        fn cardinalities(&self) -> Vec<usize> {
            self.0.cardinalities()
        }
        fn predict_proba(&self, images: &ImageBatch) -> cdbench_core::Result<Vec<Array2<f64>>> {
            self.0.predict_proba(images)
        }
        fn validation_accuracy(&self) -> Vec<f64> {
            vec![0.5; self.0.heads.len()]
        }
    }
    let clf = Weak(RandomModel::new(codes.ncols(), &cards, 2));
    let map = map_from_sets(&sets, codes.ncols());
    let err = compute_cg(&model, &clf, codes.view(), labels.view(), &map, &CgOptions::default()).unwrap_err();
    assert!(matches!(err, Error::InvalidOracle { .. }));
}

#[test]
fn empty_and_mismatched_inputs_are_rejected() {
    let model = IdentityModel {
        cardinalities: vec![2, 2],
    };
    let map = map_from_sets(&[set(&[0]), set(&[1])], 2);
    let empty = Array2::<f64>::zeros((0, 2));
    let no_labels = Array2::<usize>::zeros((0, 2));
    assert!(matches!(
        compute_cg(&model, &model, empty.view(), no_labels.view(), &map, &open()),
        Err(Error::InsufficientData(_))
    ));
    let codes = Array2::<f64>::zeros((4, 3));
    let labels = Array2::<usize>::zeros((4, 2));
    assert!(matches!(
        compute_cg(&model, &model, codes.view(), labels.view(), &map, &open()),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn report_scores_are_range_checked() {
    let mut r = MetricReport {
        variant: "beta-vae".into(),
        irs: 0.5,
        dci_d: Some(0.1),
        uc: [(1, 1.0)].into(),
        cg: [(1, 0.2)].into(),
        maps: Default::default(),
        provenance: cdbench_core::metrics::Provenance {
            model_hash: "m".into(),
            classifier_hash: "c".into(),
            dataset_hash: "d".into(),
            seed: 0,
        },
    };
    assert!(r.validate().is_ok());
    r.cg.insert(5, 1.2);
    assert!(r.validate().is_err());
}

fn permute_columns(a: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn(a.dim(), |(r, c)| a[[r, perm[c]]])
}

/// Generator reading its latents through a fixed permutation.
struct Permuted<'a> {
    inner: &'a RandomModel,
    perm: Vec<usize>,
}

impl LatentGenerator for Permuted<'_> {
    fn latent_dim(&self) -> usize {
        self.inner.m
    }

    fn generate(&self, z: ArrayView2<f64>) -> cdbench_core::Result<ImageBatch> {
        // column c of the permuted codes holds original latent perm[c]
        let mut original = Array2::zeros(z.dim());
        for (c, &p) in self.perm.iter().enumerate() {
            original.column_mut(p).assign(&z.column(c));
        }
        self.inner.generate(original.view())
    }
}

#[test]
fn metrics_are_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let l = 40;
    let cards = [3, 2, 2];
    let labels = Array2::from_shape_fn((l, 3), |(r, i)| (r / (i + 1)) % cards[i]);
    let codes = Array2::from_shape_fn((l, 6), |(r, d)| {
        if d < 3 {
            labels[[r, d]] as f64 + rng.gen_range(-0.2..0.2)
        } else {
            rng.gen_range(-1.0..1.0)
        }
    });
    let model = RandomModel::new(6, &cards, 5);
    let (irs, map) = compute_irs(codes.view(), labels.view(), &names(3), 1).unwrap();
    let uc = compute_uc(&map).unwrap();
    let cg = compute_cg(&model, &model, codes.view(), labels.view(), &map, &open()).unwrap().cg;
    for _ in 0..20 {
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut rng);
        let p_codes = permute_columns(&codes, &perm);
        let (p_irs, p_map) = compute_irs(p_codes.view(), labels.view(), &names(3), 1).unwrap();
        let gen = Permuted {
            inner: &model,
            perm: perm.clone(),
        };
        let p_cg = compute_cg(&gen, &model, p_codes.view(), labels.view(), &p_map, &open()).unwrap().cg;
        assert!((p_irs - irs).abs() < 1e-9);
        assert!((compute_uc(&p_map).unwrap() - uc).abs() < 1e-9);
        assert!((p_cg - cg).abs() < 1e-6);
    }
}

proptest! {
    #[test]
    fn uc_lies_in_unit_interval(sets in prop::collection::vec(prop::collection::btree_set(0usize..10, 1..4), 2..6)) {
        let uc = uc_from_sets(&sets).unwrap();
        prop_assert!((0.0..=1.0).contains(&uc));
        prop_assert_eq!(uc.to_bits(), uc_alg1(&sets).to_bits());
        let all_same = sets.iter().all(|s| s == &sets[0]);
        prop_assert_eq!(uc == 0.0, all_same);
    }

    #[test]
    fn uc_ignores_factor_order(sets in prop::collection::vec(prop::collection::btree_set(0usize..8, 1..4), 2..6), seed in 0u64..1000) {
        let mut shuffled = sets.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!((uc_from_sets(&sets).unwrap() - uc_from_sets(&shuffled).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn jaccard_is_symmetric(a in prop::collection::btree_set(0usize..12, 0..6), b in prop::collection::btree_set(0usize..12, 0..6)) {
        let j = jaccard(&a, &b);
        prop_assert_eq!(j, jaccard(&b, &a));
        prop_assert!((0.0..=1.0).contains(&j));
    }

    #[test]
    fn cg_lies_in_unit_interval(seed in 0u64..10_000) {
        let (codes, labels, cards, sets) = random_fixture(seed);
        let model = RandomModel::new(codes.ncols(), &cards, seed);
        let res = compute_cg(&model, &model, codes.view(), labels.view(), &map_from_sets(&sets, codes.ncols()), &open()).unwrap();
        prop_assert!((0.0..=1.0).contains(&res.cg));
        prop_assert!(res.per_factor.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn irs_lies_in_unit_interval(seed in 0u64..10_000) {
        let (codes, labels, cards, _) = random_fixture(seed);
        let (irs, map) = compute_irs(codes.view(), labels.view(), &names(cards.len()), 1).unwrap();
        prop_assert!((0.0..=1.0).contains(&irs));
        prop_assert!(map.importance.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }
}

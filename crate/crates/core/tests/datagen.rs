use std::collections::{BTreeMap, BTreeSet};

use cdbench_core::datagen::{
    apply_confounded_filter, generate_dataset, metadata, query_pairs, render, render_candle_lite, render_toy,
    Conditioning, DatasetManifest, KeepRule, PairMode, PairingQuery, RenderSettings,
};
use cdbench_core::presets;
use cdbench_core::scm::{CausalGraphSpec, ConstraintRule, FactorAssignment, FactorSpec, Predicate};
use cdbench_core::Error;

fn assignment(pairs: &[(&str, &str)], seed: u64) -> FactorAssignment {
    FactorAssignment {
        values: pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        seed,
    }
}

#[test]
fn toy_dataset_has_432_records_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate_dataset(&presets::toy_graph(), &RenderSettings::toy(), &dir.path().join("a"), 4).unwrap();
    let b = generate_dataset(&presets::toy_graph(), &RenderSettings::toy(), &dir.path().join("b"), 4).unwrap();
    assert_eq!(a.len(), 432);
    assert_eq!(a.hash(), b.hash());
    let reloaded = DatasetManifest::load(&dir.path().join("a/manifest.json")).unwrap();
    assert_eq!(reloaded.hash(), a.hash());
    let c = generate_dataset(&presets::toy_graph(), &RenderSettings::toy(), &dir.path().join("c"), 5).unwrap();
    assert_ne!(c.hash(), a.hash());

    let ids: BTreeSet<&str> = a.records.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids.len(), 432);
    let img = a.load_image(&a.records[0]).unwrap();
    assert_eq!(img.dimensions(), (128, 128));
    for r in &a.records {
        let pos = |f: &str, v: &[&str]| v.iter().position(|x| *x == r.assignment.get(f).unwrap()).unwrap();
        assert_eq!(pos("shape", &presets::TOY_SHAPES), pos("color", &presets::TOY_COLORS));
    }
}

#[test]
fn toy_cylinder_is_red_and_deterministic() {
    let a = assignment(&[("shape", "cylinder"), ("color", "red")], 9);
    let r1 = render_toy(&a).unwrap();
    let r2 = render_toy(&a).unwrap();
    assert_eq!(r1.pixels, r2.pixels);
    let mask = r1.foreground.as_ref().unwrap();
    let (mut red, mut n) = (0usize, 0usize);
    for (i, px) in r1.pixels.pixels().enumerate() {
        if mask[i] {
            n += 1;
            if px[0] as u32 > px[1] as u32 + 40 && px[0] as u32 > px[2] as u32 + 40 {
                red += 1;
            }
        }
    }
    assert!(red * 2 > n, "{red} of {n} foreground pixels are red");
    let bad = assignment(&[("shape", "cylinder"), ("color", "blue")], 9);
    assert!(matches!(render_toy(&bad), Err(Error::Constraint(_))));
}

/// Shrinking any edge of the box by one pixel must drop a foreground pixel.
fn assert_tight(mask: &[bool], b: &cdbench_core::datagen::Bounds, w: u32, h: u32) {
    assert!(b.is_valid_for(w, h));
    for row in 0..h {
        for col in 0..w {
            if mask[(row * w + col) as usize] {
                assert!(b.contains_pixel(col, row, h), "pixel ({col},{row}) outside bounds");
            }
        }
    }
    let rows = b.rows(h);
    let cols = b.cols();
    let hit_row = |r: u32| cols.clone().any(|c| mask[(r * w + c) as usize]);
    let hit_col = |c: u32| rows.clone().any(|r| mask[(r * w + c) as usize]);
    assert!(hit_row(rows.start) && hit_row(rows.end - 1));
    assert!(hit_col(cols.start) && hit_col(cols.end - 1));
}

#[test]
fn candle_metadata_has_the_reference_layout() {
    let a = assignment(
        &[
            ("light", "left"),
            ("scene", "bridge"),
            ("object", "sphere"),
            ("size", "medium"),
            ("color", "red"),
            ("angle", "60"),
        ],
        1,
    );
    let rec = render_candle_lite(&a, 64, 64).unwrap();
    assert_tight(rec.foreground.as_ref().unwrap(), &rec.bounds, 64, 64);
    let text = metadata::to_json(
        cdbench_core::datagen::RendererKind::CandleLite,
        &a.values,
        rec.bounds,
    )
    .unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["objects"]["Sphere_0"]["rotation"], 60);
    assert_eq!(v["scene"], "bridge");
    assert_eq!(v["lights"], "left");
    let (labels, bounds) = metadata::from_json(cdbench_core::datagen::RendererKind::CandleLite, &text).unwrap();
    assert_eq!(labels, a.values);
    assert_eq!(bounds, rec.bounds);
}

#[test]
fn candle_foreground_grows_with_size() {
    for object in ["cube", "sphere", "cylinder", "cone", "torus"] {
        let counts: Vec<usize> = ["small", "medium", "large"]
            .iter()
            .map(|size| {
                let a = assignment(
                    &[
                        ("light", "middle"),
                        ("scene", "street"),
                        ("object", object),
                        ("size", size),
                        ("color", "blue"),
                        ("angle", "30"),
                    ],
                    3,
                );
                let rec = render_candle_lite(&a, 64, 64).unwrap();
                rec.foreground.unwrap().iter().filter(|&&b| b).count()
            })
            .collect();
        assert!(counts[0] < counts[1] && counts[1] < counts[2], "{object}: {counts:?}");
    }
}

#[test]
fn rule_violations_are_rejected_by_the_renderer() {
    let graph = presets::candle_lite_graph();
    let a = assignment(
        &[
            ("light", "left"),
            ("scene", "skywalk"),
            ("object", "sphere"),
            ("size", "small"),
            ("color", "red"),
            ("angle", "0"),
        ],
        0,
    );
    let settings = RenderSettings::candle_lite(64, 64, None);
    assert!(matches!(render(&graph, &settings, &a, "x"), Err(Error::Constraint(_))));
}

#[test]
fn unsatisfiable_graph_is_reported() {
    let graph = CausalGraphSpec {
        factors: vec![
            FactorSpec::new("shape", &["cylinder", "cone"]),
            FactorSpec::new("color", &["red", "green"]),
        ],
        observed_rules: vec![ConstraintRule::new(
            vec![
                Predicate::new("shape", &["cylinder", "cone"]),
                Predicate::new("color", &["red", "green"]),
            ],
            "nothing",
        )],
        nuisance: vec![],
        seed: 0,
    };
    let dir = tempfile::tempdir().unwrap();
    let err = generate_dataset(&graph, &RenderSettings::toy(), dir.path(), 0).unwrap_err();
    assert!(matches!(err, Error::Unsatisfiable), "{err}");
}

fn sprites(dir: &std::path::Path) -> DatasetManifest {
    generate_dataset(&presets::sprites_graph(), &RenderSettings::sprites(), dir, 2).unwrap()
}

#[test]
fn filters_are_sound_and_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let m = sprites(dir.path());
    assert_eq!(m.len(), 3 * 3 * 6 * 9 * 9);

    let stratum = Conditioning {
        keep: vec![KeepRule {
            require: vec![
                Predicate::new("shape", &["square"]),
                Predicate::new("scale", &["small"]),
                Predicate::new("orientation", &["0", "60"]),
                Predicate::new("pos_x", &["0", "1", "2"]),
                Predicate::new("pos_y", &["0", "1", "2"]),
            ],
            label: "square/small".into(),
        }],
    };
    let f = apply_confounded_filter(&m, &stratum).unwrap();
    assert_eq!(f.len(), 2 * 3 * 3);
    for r in &f.records {
        assert_eq!(r.assignment.get("shape"), Some("square"));
        assert_eq!(r.assignment.get("scale"), Some("small"));
    }

    let conditioning = presets::sprites_confounded_conditioning();
    let filtered = apply_confounded_filter(&m, &conditioning).unwrap();
    let all: BTreeSet<&str> = m.records.iter().map(|r| r.id.as_str()).collect();
    assert!(filtered.records.iter().all(|r| all.contains(r.id.as_str())));
    // independent scan over the metadata files
    let mut expected = 0;
    for r in &m.records {
        let text = std::fs::read_to_string(m.metadata_path(r)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let get = |f: &str| v["factors"][f].as_str().unwrap().to_string();
        let band = |f: &str| get(f).parse::<usize>().unwrap() / 3;
        let row = match get("shape").as_str() {
            "square" => 0,
            "ellipse" => 1,
            _ => 2,
        };
        let scale_ok = ["small", "medium", "large"][row] == get("scale");
        let orient: usize = get("orientation").parse().unwrap();
        if scale_ok && orient / 120 == row && band("pos_x") == row && band("pos_y") == row {
            expected += 1;
        }
    }
    assert_eq!(filtered.len(), expected);
    let twice = apply_confounded_filter(&filtered, &conditioning).unwrap();
    assert_eq!(twice.records, filtered.records);

    let tautology = Conditioning {
        keep: vec![KeepRule {
            require: vec![],
            label: "all".into(),
        }],
    };
    assert_eq!(apply_confounded_filter(&m, &tautology).unwrap().records, m.records);

    let impossible = Conditioning {
        keep: vec![KeepRule {
            require: vec![Predicate::new("shape", &[])],
            label: "none".into(),
        }],
    };
    assert!(matches!(apply_confounded_filter(&m, &impossible), Err(Error::EmptyFilter)));
    let unknown = Conditioning {
        keep: vec![KeepRule {
            require: vec![Predicate::new("hue", &["red"])],
            label: String::new(),
        }],
    };
    assert!(matches!(apply_confounded_filter(&m, &unknown), Err(Error::Schema(_))));
}

#[test]
fn pair_queries_respect_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let settings = RenderSettings::candle_lite(32, 32, Some(300));
    let m = generate_dataset(&presets::candle_lite_graph(), &settings, dir.path(), 3).unwrap();
    let by_id: BTreeMap<&str, &FactorAssignment> = m.records.iter().map(|r| (r.id.as_str(), &r.assignment)).collect();

    let q = PairingQuery {
        mode: PairMode::Match,
        factors: vec!["scene".into()],
        rank_factor: None,
    };
    let pairs = query_pairs(&m, &q, 50, 1).unwrap();
    assert_eq!(pairs.len(), 50);
    assert_eq!(pairs, query_pairs(&m, &q, 50, 1).unwrap());
    for p in &pairs {
        assert_ne!(p.a, p.b);
        assert_eq!(by_id[p.a.as_str()].get("scene"), by_id[p.b.as_str()].get("scene"));
    }

    let q = PairingQuery {
        mode: PairMode::Rank,
        factors: vec!["object".into()],
        rank_factor: Some("size".into()),
    };
    let size = presets::candle_lite_graph().factor("size").unwrap().clone();
    for p in query_pairs(&m, &q, 50, 2).unwrap() {
        let (a, b) = (by_id[p.a.as_str()], by_id[p.b.as_str()]);
        assert_eq!(a.get("object"), b.get("object"));
        let (ra, rb) = (
            size.index_of(a.get("size").unwrap()).unwrap(),
            size.index_of(b.get("size").unwrap()).unwrap(),
        );
        assert_eq!(p.a_larger, Some(ra > rb));
    }

    // every factor matched: with one replicate per assignment there is no partner
    let all = PairingQuery {
        mode: PairMode::Match,
        factors: m.graph.factor_names().iter().map(|s| s.to_string()).collect(),
        rank_factor: None,
    };
    assert!(query_pairs(&m, &all, 5, 0).unwrap().is_empty());

    let unordered = PairingQuery {
        mode: PairMode::Rank,
        factors: vec![],
        rank_factor: Some("scene".into()),
    };
    assert!(query_pairs(&m, &unordered, 5, 0).is_err());
}

#[test]
fn nuisance_never_reaches_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(
        &presets::toy_graph(),
        &RenderSettings {
            max_records: Some(6),
            ..RenderSettings::toy()
        },
        dir.path(),
        0,
    )
    .unwrap();
    let names: BTreeSet<String> = m.graph.factor_names().iter().map(|s| s.to_string()).collect();
    for r in &m.records {
        let text = std::fs::read_to_string(m.metadata_path(r)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let keys: BTreeSet<String> = v["factors"].as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, names);
        for n in &m.graph.nuisance {
            assert!(!text.contains(&format!("\"{}\"", n.name)));
        }
    }
}

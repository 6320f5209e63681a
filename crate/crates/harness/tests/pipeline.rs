use std::fs;
use std::path::Path;

use cdbench::cache::{stage_key, Cache, Stage};
use cdbench::config::MetricKind;
use cdbench::pipeline::{
    encode_dataset, label_array, read_export, run_experiment_detailed, score_codes, DataSlot, EvalOptions,
};
use cdbench::table::{build_table, TableLayout};
use cdbench::{export_latents, run_experiment, ExperimentConfig, HarnessError, Runner};
use cdbench_core::metrics::{MetricReport, Provenance};
use cdbench_nn::train::{load_model, train};
use cdbench_nn::TrainingSet;

const TOY: &str = r#"
name = "toy-smoke"
variants = ["beta-vae"]
seeds = [0]
metrics = ["irs", "uc"]

[dataset]
renderer = "toy"

[train]
epochs = 2
hidden = [64]
latent_dim = 8
"#;

fn runner(root: &Path) -> Runner {
    Runner::new(Cache::new(root))
}

fn toy(extra: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&format!("{TOY}{extra}"), Path::new(".")).unwrap()
}

fn files_under(dir: &Path) -> Vec<(std::path::PathBuf, std::time::SystemTime)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let e = e.unwrap();
            if e.file_type().unwrap().is_dir() {
                stack.push(e.path());
            } else {
                out.push((e.path(), e.metadata().unwrap().modified().unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn rerun_is_a_pure_cache_hit() {
    let dir = tempfile::tempdir().unwrap();
    let r = runner(dir.path());
    let cfg = toy("");
    let first = run_experiment(&cfg, &r).unwrap();
    assert_eq!(first.len(), 1);
    assert_eq!(first[0].uc.len(), 1);
    let before = files_under(dir.path());
    let second = run_experiment(&cfg, &r).unwrap();
    assert_eq!(first, second);
    assert_eq!(before, files_under(dir.path()), "rerun touched the cache");

    // a changed training value retrains the model but reuses the dataset
    let changed = toy("lr = 0.002\n");
    let third = run_experiment(&changed, &r).unwrap();
    assert_ne!(third[0].provenance.model_hash, first[0].provenance.model_hash);
    assert_eq!(third[0].provenance.dataset_hash, first[0].provenance.dataset_hash);
    assert_eq!(fs::read_dir(dir.path().join("datasets")).unwrap().count(), 1);
    assert_eq!(fs::read_dir(dir.path().join("models")).unwrap().count(), 2);
}

#[test]
fn unknown_variant_fails_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml_str(&TOY.replace("beta-vae", "gan-vae"), Path::new(".")).unwrap();
    let err = run_experiment(&cfg, &runner(dir.path())).unwrap_err();
    assert!(err.is_config(), "{err}");
    assert_eq!(fs::read_dir(dir.path()).map(|d| d.count()).unwrap_or(0), 0);
}

#[test]
fn failing_stage_is_named_and_upstream_kept() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml_str(
        &TOY.replace("metrics = [\"irs\", \"uc\"]", "metrics = [\"irs\", \"cg\"]")
            .replace("[train]", "[classifier]\nepochs = 1\n\n[cg]\nfloor = 1.01\n\n[train]"),
        Path::new("."),
    )
    .unwrap();
    let err = run_experiment(&cfg, &runner(dir.path())).unwrap_err();
    match &err {
        HarnessError::Stage { stage, source } => {
            assert_eq!(stage, "evaluate beta-vae seed 0");
            assert!(source.to_string().contains("below the floor"), "{source}");
        }
        other => panic!("expected a stage error, got {other}"),
    }
    assert!(!err.is_config());
    for stage in ["datasets", "classifiers", "models"] {
        assert_eq!(fs::read_dir(dir.path().join(stage)).unwrap().count(), 1, "{stage}");
    }
    assert!(!dir.path().join("reports").exists() || fs::read_dir(dir.path().join("reports")).unwrap().count() == 0);
}

#[test]
fn interrupted_training_resumes_from_partial() {
    let dir = tempfile::tempdir().unwrap();
    let r = runner(dir.path());
    let cfg = toy("");
    let resolved = cfg.resolve().unwrap();
    let data = r.dataset(&resolved.graph, &resolved.settings, 0).unwrap();
    let tc = cfg.train_config(resolved.variants[0], 0);

    // one finished epoch left behind in the partial directory
    let key = stage_key(Stage::Models, &(&data.hash, &tc)).unwrap();
    let set = TrainingSet::from_manifest(&data.manifest, false).unwrap();
    let mut short = tc.clone();
    short.epochs = 1;
    train(&short, &set, &r.cache.begin(Stage::Models, &key).unwrap()).unwrap();

    let mut slot = DataSlot::new(&data, false);
    let resumed = r.model(&data, &mut slot, &tc).unwrap();
    let fresh_dir = tempfile::tempdir().unwrap();
    let fresh = train(&tc, &set, fresh_dir.path()).unwrap();
    assert_eq!(resumed.hash, fresh.model_hash);
    let (_, meta) = load_model(&resumed.checkpoint).unwrap();
    assert_eq!(meta.epoch, 2);
}

#[test]
fn exported_latents_score_identically() {
    let dir = tempfile::tempdir().unwrap();
    let r = runner(&dir.path().join("cache"));
    let cfg = toy("snapshot_epochs = [1]\n");
    let outcome = run_experiment_detailed(&cfg, &r).unwrap();
    assert_eq!(outcome.snapshots.len(), 1);
    assert_eq!(outcome.snapshots[0].0, 1);

    let resolved = cfg.resolve().unwrap();
    let data = r.dataset(&resolved.graph, &resolved.settings, 0).unwrap();
    let model_dir = fs::read_dir(dir.path().join("cache/models")).unwrap().next().unwrap().unwrap().path();
    let (vae, _) = load_model(&model_dir.join("model.ckpt")).unwrap();
    let out = dir.path().join("export");
    export_latents(&vae, &data.manifest, &out).unwrap();
    let (codes, names, labels) = read_export(&out).unwrap();
    assert_eq!(codes.nrows(), data.manifest.len());
    assert_eq!(names, data.manifest.graph.factor_names());

    let set = TrainingSet::from_manifest(&data.manifest, false).unwrap();
    let in_process = encode_dataset(&vae, &set).unwrap();
    assert_eq!(codes, in_process);
    let opts = EvalOptions {
        metrics: vec![MetricKind::Irs, MetricKind::DciD, MetricKind::Uc],
        rhos: vec![1, 2],
        cg: Default::default(),
        subsample_seed: 0,
    };
    let a = score_codes(&codes, &labels, &names, &opts, None).unwrap();
    let b = score_codes(&in_process, &label_array(&set.labels), &set.factor_names, &opts, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.irs.to_bits(), outcome.reports[0].irs.to_bits());
    assert_eq!(a.uc[&1].to_bits(), outcome.reports[0].uc[&1].to_bits());
}

fn fixture(variant: &str, irs: f64, dci: f64, uc: f64, cg: f64) -> MetricReport {
    MetricReport {
        variant: variant.into(),
        irs,
        dci_d: Some(dci),
        uc: [(1, uc)].into(),
        cg: [(1, cg)].into(),
        maps: Default::default(),
        provenance: Provenance {
            model_hash: format!("model-{variant}"),
            classifier_hash: "oracle".into(),
            dataset_hash: "0f".repeat(32),
            seed: 0,
        },
    }
}

#[test]
fn toy_table_matches_golden() {
    let reports = vec![
        fixture("beta-vae", 0.99, 0.10, 0.00, 0.01),
        fixture("beta-tcvae", 0.99, 0.13, 0.00, 0.04),
        fixture("dip-vae-i", 0.99, 0.11, 0.00, 0.03),
        fixture("factor-vae", 0.99, 0.12, 0.00, 0.04),
    ];
    let layout = TableLayout::from_reports(&reports);
    let text = build_table(&reports, &layout).unwrap().render_text(2);
    let golden = include_str!("golden/toy_table.txt");
    assert_eq!(text, golden);
}

#[test]
fn shipped_configs_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["toy.toml", "sprites-clean.toml", "sprites-confounded.toml", "candle-lite.toml"] {
        let cfg = ExperimentConfig::load(&dir.join(name)).unwrap();
        cfg.resolve().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    for (file, preset) in [
        ("toy.toml", cdbench_core::presets::toy_graph()),
        ("candle-lite.toml", cdbench_core::presets::candle_lite_graph()),
        ("sprites.toml", cdbench_core::presets::sprites_graph()),
    ] {
        let text = fs::read_to_string(dir.join("graphs").join(file)).unwrap();
        assert_eq!(cdbench_core::scm::CausalGraphSpec::from_toml_str(&text).unwrap(), preset, "{file}");
    }
    let text = fs::read_to_string(dir.join("graphs/sprites-confounded.toml")).unwrap();
    let parsed: cdbench_core::datagen::Conditioning = toml::from_str(&text).unwrap();
    assert_eq!(parsed, cdbench_core::presets::sprites_confounded_conditioning());
}

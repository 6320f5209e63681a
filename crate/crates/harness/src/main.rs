use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use cdbench::cache::Cache;
use cdbench::config::{self, MetricKind, TrainOverrides};
use cdbench::pipeline::{
    export_latents, load_reports, run_experiment_detailed, DatasetHandle, EvalOptions,
    ModelHandle, OracleHandle, Runner,
};
use cdbench::table::{emit_table, plot_score_vs_epoch, TableLayout, EPOCH_PLOT};
use cdbench::{ExperimentConfig, HarnessError};
use cdbench_core::datagen::{
    apply_confounded_filter, generate_dataset, query_pairs, PairMode, PairingQuery, RenderSettings, RendererKind,
    MANIFEST_FILE,
};
use cdbench_core::metrics::{BaselineMode, FactorClassifier};
use cdbench_nn::checkpoint::file_hash;
use cdbench_nn::classifier::train_classifier;
use cdbench_nn::train::{load_model, train_with_progress};
use cdbench_nn::{Classifier, ClassifierConfig, TrainConfig, TrainingSet, VariantSpec};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cdbench", version, about = "Causal disentanglement benchmark")]
struct Cli {
    /// Cache root (defaults to $CDBENCH_CACHE, then ./.cdbench-cache).
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Suppress progress output on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, condition and pair datasets.
    #[command(subcommand)]
    Datagen(DatagenCmd),
    /// Train models and export their latent codes.
    #[command(subcommand)]
    Models(ModelsCmd),
    /// Train and evaluate the factor oracle classifier.
    #[command(subcommand)]
    Oracle(OracleCmd),
    /// Score a trained model.
    #[command(subcommand)]
    Metrics(MetricsCmd),
    /// Run a full experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Tabulate and plot saved reports.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum DatagenCmd {
    /// Print a graph (preset or file) or a conditioning as TOML.
    Show {
        #[arg(long, conflicts_with = "conditioning")]
        graph: Option<String>,
        #[arg(long)]
        conditioning: Option<String>,
    },
    Generate {
        /// Graph preset (toy, candle-lite, sprites) or TOML path; defaults to the renderer's preset.
        #[arg(long)]
        graph: Option<String>,
        #[arg(long)]
        renderer: RendererKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        width: Option<u32>,
        #[arg(long)]
        height: Option<u32>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        max_records: Option<usize>,
    },
    Filter {
        #[arg(long)]
        dataset: PathBuf,
        /// Conditioning preset (sprites-confounded) or TOML path.
        #[arg(long)]
        conditioning: String,
        /// Output manifest; defaults to manifest-filtered.json beside the input.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Pairs {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: PairMode,
        /// Factors the pair shares, comma separated.
        #[arg(long, value_delimiter = ',')]
        factors: Vec<String>,
        #[arg(long)]
        rank_factor: Option<String>,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_mode(s: &str) -> Result<PairMode, String> {
    match s {
        "match" => Ok(PairMode::Match),
        "rank" => Ok(PairMode::Rank),
        other => Err(format!("unknown pair mode `{other}` (match or rank)")),
    }
}

#[derive(Subcommand)]
enum ModelsCmd {
    Train {
        #[arg(long)]
        variant: String,
        #[arg(long)]
        dataset: PathBuf,
        /// TOML of training overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    Export {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum OracleCmd {
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    Eval {
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
}

#[derive(Subcommand)]
enum MetricsCmd {
    Run(MetricsRun),
}

#[derive(Args)]
struct MetricsRun {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    rho: Vec<usize>,
    #[arg(long, default_value = "max-dev")]
    baseline: String,
    /// Metrics to compute, comma separated (irs, dci-d, uc, cg).
    #[arg(long, value_delimiter = ',', default_value = "irs,dci-d,uc,cg")]
    metrics: Vec<String>,
    /// Minimum held-out oracle accuracy.
    #[arg(long)]
    floor: Option<f64>,
    /// Score CG on a subsample of this many records.
    #[arg(long)]
    cg_records: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Report files or directories of reports.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    precision: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

/// Configuration problems exit with 2, everything else with 3.
fn is_config_error(e: &anyhow::Error) -> bool {
    if e.downcast_ref::<CliUsage>().is_some() {
        return true;
    }
    if let Some(h) = e.downcast_ref::<HarnessError>() {
        return h.is_config();
    }
    if let Some(c) = e.downcast_ref::<cdbench_core::Error>() {
        return matches!(c, cdbench_core::Error::Config(_) | cdbench_core::Error::Toml(_));
    }
    matches!(e.downcast_ref::<cdbench_nn::NnError>(), Some(cdbench_nn::NnError::Config(_)))
}

#[derive(Debug)]
struct CliUsage(String);

impl std::error::Error for CliUsage {}

impl std::fmt::Display for CliUsage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(CliUsage(msg.into()))
}

fn runner(cli_cache: Option<PathBuf>, quiet: bool) -> Runner {
    let cache = cli_cache.map(Cache::new).unwrap_or_else(Cache::from_env);
    Runner {
        cache,
        progress: !quiet,
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let quiet = cli.quiet;
    match cli.command {
        Command::Datagen(cmd) => datagen(cmd),
        Command::Models(cmd) => models(cmd, quiet),
        Command::Oracle(cmd) => oracle(cmd),
        Command::Metrics(MetricsCmd::Run(args)) => metrics_run(args),
        Command::Run { config } => run(&config, runner(cli.cache, quiet)),
        Command::Report(args) => report(args),
    }
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

fn load_dataset(p: &Path) -> anyhow::Result<DatasetHandle> {
    let path = manifest_path(p);
    DatasetHandle::load(&path).with_context(|| format!("loading dataset {}", path.display()))
}

fn datagen(cmd: DatagenCmd) -> anyhow::Result<()> {
    match cmd {
        DatagenCmd::Show { graph, conditioning } => match (graph, conditioning) {
            (Some(g), None) => print!("{}", config::resolve_graph(&g, Path::new("."))?.to_toml_string()),
            (None, Some(c)) => print!("{}", toml::to_string(&config::resolve_conditioning(&c, Path::new("."))?)?),
            _ => return Err(usage("pass --graph or --conditioning")),
        },
        DatagenCmd::Generate {
            graph,
            renderer,
            out,
            seed,
            width,
            height,
            replicates,
            max_records,
        } => {
            let g = config::resolve_graph(graph.as_deref().unwrap_or(renderer.as_str()), Path::new("."))?;
            let mut settings = RenderSettings::for_renderer(renderer);
            settings.width = width.unwrap_or(settings.width);
            settings.height = height.unwrap_or(settings.height);
            settings.replicates = replicates.unwrap_or(settings.replicates);
            settings.max_records = max_records.or(settings.max_records);
            let m = generate_dataset(&g, &settings, &out, seed)?;
            println!("{} records written to {}", m.len(), out.join(MANIFEST_FILE).display());
            println!("hash {}", m.hash());
        }
        DatagenCmd::Filter {
            dataset,
            conditioning,
            out,
        } => {
            let d = load_dataset(&dataset)?;
            let c = config::resolve_conditioning(&conditioning, Path::new("."))?;
            c.validate(&d.manifest.graph).map_err(|e| usage(e.to_string()))?;
            let mut sub = apply_confounded_filter(&d.manifest, &c)?;
            let out = out.unwrap_or_else(|| d.manifest.root.join("manifest-filtered.json"));
            let out_root = out.parent().map(Path::to_path_buf).unwrap_or_default();
            if out_root.canonicalize().ok() != d.manifest.root.canonicalize().ok() {
                // record paths are relative to the manifest; pin them to the originals
                let root = d.manifest.root.canonicalize().context("resolving dataset root")?;
                for r in &mut sub.records {
                    r.image = root.join(&r.image).to_string_lossy().into_owned();
                    r.metadata = root.join(&r.metadata).to_string_lossy().into_owned();
                }
            }
            sub.save(&out)?;
            println!("kept {} of {} records; manifest {}", sub.len(), d.manifest.len(), out.display());
        }
        DatagenCmd::Pairs {
            dataset,
            mode,
            factors,
            rank_factor,
            count,
            seed,
        } => {
            let d = load_dataset(&dataset)?;
            let q = PairingQuery {
                mode,
                factors,
                rank_factor,
            };
            for p in query_pairs(&d.manifest, &q, count, seed)? {
                println!("{}", serde_json::to_string(&p)?);
            }
        }
    }
    Ok(())
}

fn models(cmd: ModelsCmd, quiet: bool) -> anyhow::Result<()> {
    match cmd {
        ModelsCmd::Train {
            variant,
            dataset,
            config,
            out,
            seed,
        } => {
            let v: VariantSpec = variant.parse()?;
            let overrides = match &config {
                Some(p) => TrainOverrides::from_toml_file(p)?,
                None => TrainOverrides::default(),
            };
            let d = load_dataset(&dataset)?;
            let renderer = d.manifest.render.renderer;
            let mut cfg = TrainConfig::preset(renderer, v, config::default_epochs(renderer), seed);
            overrides.apply(&mut cfg);
            cfg.validate()?;
            let data = TrainingSet::from_manifest(&d.manifest, v.bbox)?;
            let outcome = train_with_progress(&cfg, &data, &out, |e| {
                if !quiet {
                    eprintln!("epoch {} step {} loss {:.4} ({:.1}s)", e.epoch, e.step, e.terms.total, e.seconds);
                }
            })?;
            println!("checkpoint {}", outcome.checkpoint.display());
            println!("hash {}", outcome.model_hash);
        }
        ModelsCmd::Export { model, dataset, out } => {
            let (vae, _) = load_model(&model)?;
            let d = load_dataset(&dataset)?;
            let (lat, lab) = export_latents(&vae, &d.manifest, &out)?;
            println!("{}\n{}", lat.display(), lab.display());
        }
    }
    Ok(())
}

fn oracle(cmd: OracleCmd) -> anyhow::Result<()> {
    match cmd {
        OracleCmd::Train {
            dataset,
            out,
            epochs,
            seed,
        } => {
            let d = load_dataset(&dataset)?;
            let mut cfg = ClassifierConfig::default();
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let clf = train_classifier(&d.manifest, d.manifest.split_seeds[0], &cfg)?;
            let hash = clf.save(&out)?;
            print_accuracy(&clf.factor_names(), &clf.meta.accuracy, "held-out");
            println!("checkpoint {} hash {hash}", out.display());
        }
        OracleCmd::Eval { classifier, dataset } => {
            let clf = Classifier::load(&classifier)?;
            let d = load_dataset(&dataset)?;
            let acc = clf.evaluate(&d.manifest)?;
            print_accuracy(&clf.factor_names(), &acc, "accuracy");
        }
    }
    Ok(())
}

fn print_accuracy(names: &[String], acc: &[f64], label: &str) {
    for (n, a) in names.iter().zip(acc) {
        println!("{n:<12} {label} {a:.4}");
    }
}

fn metrics_run(args: MetricsRun) -> anyhow::Result<()> {
    let metrics = args
        .metrics
        .iter()
        .map(|m| m.parse::<MetricKind>())
        .collect::<Result<Vec<_>, _>>()?;
    let baseline: BaselineMode = args.baseline.parse()?;
    if args.rho.is_empty() || args.rho.contains(&0) {
        return Err(usage("--rho needs positive values"));
    }
    let mut cg = config::CgSection {
        baseline,
        max_records: args.cg_records,
        ..Default::default()
    };
    if let Some(f) = args.floor {
        cg.floor = f;
    }
    let opts = EvalOptions {
        metrics,
        rhos: args.rho.clone(),
        cg,
        subsample_seed: 0,
    };
    let oracle = match (&args.classifier, opts.wants(MetricKind::Cg)) {
        (Some(p), _) => Some(OracleHandle {
            classifier: Classifier::load(p)?,
            hash: file_hash(p)?,
            path: p.clone(),
        }),
        (None, true) => return Err(usage("CG needs --classifier")),
        (None, false) => None,
    };
    let model = ModelHandle::from_checkpoint(&args.model)?;
    let (vae, meta) = load_model(&model.checkpoint)?;
    if let Some(&r) = args.rho.iter().find(|&&r| r > vae.latent_dim()) {
        return Err(usage(format!("ρ = {r} exceeds the latent size {}", vae.latent_dim())));
    }
    let d = load_dataset(&args.dataset)?;
    let data = TrainingSet::from_manifest(&d.manifest, false)?;
    let report = cdbench::evaluate(
        &vae,
        &model.hash,
        oracle.as_ref(),
        &d,
        &data,
        &meta.variant.to_string(),
        meta.seed,
        &opts,
    )?;
    match &args.out {
        Some(p) => {
            std::fs::write(p, report.to_json()).with_context(|| format!("writing {}", p.display()))?;
            eprintln!("report written to {}", p.display());
        }
        None => println!("{}", report.to_json()),
    }
    Ok(())
}

fn run(config_path: &Path, runner: Runner) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::load(config_path)?;
    let outcome = run_experiment_detailed(&cfg, &runner)?;
    let layout = TableLayout {
        metrics: cfg.metrics.clone(),
        rhos: cfg.rho.clone(),
        precision: 2,
    };
    let out_dir = cfg.output_dir();
    let table = emit_table(&outcome.reports, &layout, out_dir.as_deref())?;
    print!("{}", table.render_text(layout.precision));
    if let Some(dir) = &out_dir {
        if !outcome.snapshots.is_empty() {
            let snap_dir = dir.join("snapshots");
            std::fs::create_dir_all(&snap_dir).with_context(|| format!("creating {}", snap_dir.display()))?;
            for (epoch, r) in &outcome.snapshots {
                let p = snap_dir.join(format!("{}-seed{}-epoch{epoch}.json", r.variant, r.provenance.seed));
                std::fs::write(&p, r.to_json()).with_context(|| format!("writing {}", p.display()))?;
            }
            plot_score_vs_epoch(&outcome.snapshots, cfg.rho[0], &dir.join(EPOCH_PLOT))?;
        }
        println!("outputs in {}", dir.display());
    }
    Ok(())
}

fn report(args: ReportArgs) -> anyhow::Result<()> {
    let reports = load_reports(&args.reports)?;
    if reports.is_empty() {
        return Err(usage("no reports found"));
    }
    let mut layout = TableLayout::from_reports(&reports);
    layout.precision = args.precision;
    let table = emit_table(&reports, &layout, args.out.as_deref())?;
    print!("{}", table.render_text(layout.precision));
    Ok(())
}

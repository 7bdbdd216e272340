mod demo;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use maric_atlas::{run_atlas, AtlasOptions, TsneConfig};
use maric_core::backend::{backend_from_endpoints, HttpSettings, DEFAULT_EMBED_BATCH};
use maric_core::config::RunConfig;
use maric_core::datasets::{load_dataset, read_manifest, samples_from_manifest, write_manifest};
use maric_core::harness::{
    diff_ablation, emit_report, render_ablation, run_experiment, ReportFormat, RunOutput,
    RunResult, MANIFEST_FILE,
};
use maric_core::Method;
use maric_study::{build_study, serve_study, summary_csv, StudyStore};

#[derive(Debug, Parser)]
#[command(name = "maric", version, about = "Multi-agent VLM image classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify a dataset with one method and write the run directory.
    Run(RunArgs),
    /// Accuracy table over finished runs.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
    },
    /// Per-dataset and per-class accuracy deltas between two runs.
    Ablate {
        #[arg(long)]
        full: PathBuf,
        #[arg(long)]
        ablated: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
    },
    /// Embed reasoning traces and project them with t-SNE.
    Atlas(AtlasArgs),
    /// Human rating study over generated aspects.
    Study {
        #[command(subcommand)]
        command: StudyCommand,
    },
    /// Sample a dataset and pin the selection to a manifest file.
    Manifest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset, scripted mock backend and config.
    Demo(demo::DemoArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Dataset id; defaults to `dataset_id` in the config.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    n_aspects: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    model: Option<String>,
    /// Replaces the configured endpoints; repeat for several.
    #[arg(long = "endpoint")]
    endpoints: Vec<String>,
    /// Skip the transcript cache.
    #[arg(long)]
    no_cache: bool,
}

#[derive(Debug, Args)]
struct AtlasArgs {
    #[arg(long)]
    transcripts: PathBuf,
    /// Embedding endpoint base URL, or `mock:<script.json>`.
    #[arg(long)]
    embed_endpoint: String,
    #[arg(long, default_value = "intfloat/e5-large-v2")]
    embed_model: String,
    #[arg(long, default_value_t = DEFAULT_EMBED_BATCH)]
    embed_batch: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SummaryFormat {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum StudyCommand {
    /// Sample items from a MARIC run into a new study store.
    Build {
        #[arg(long)]
        transcripts: PathBuf,
        /// Config whose dataset entry locates the images.
        #[arg(long)]
        config: PathBuf,
        /// Manifest of the run; defaults to the one beside the log.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 30)]
        k: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Serve the rating API and UI.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
        /// Directory with the built rating UI.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Print pooled mean and SD per criterion.
    Summary {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: SummaryFormat,
    },
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::from_file(path).with_context(|| format!("loading config {}", path.display()))
}

async fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(d) = args.dataset {
        cfg.dataset_id = d;
    }
    if cfg.dataset_id.is_empty() {
        bail!("no dataset given; pass --dataset or set dataset_id in the config");
    }
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if let Some(n) = args.n_aspects {
        cfg.n_aspects = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(p) = args.parallel {
        cfg.max_parallel = p;
    }
    if let Some(m) = args.model {
        cfg.model = m;
    }
    if !args.endpoints.is_empty() {
        cfg.endpoints = args.endpoints;
    }
    if args.no_cache {
        cfg.cache_dir = None;
    }
    cfg.validate()?;
    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-{}", cfg.dataset_id, cfg.method.as_str())));

    let labels = cfg.label_set(&cfg.dataset_id)?;
    let loaded = load_dataset(&cfg.dataset_id, cfg.dataset(&cfg.dataset_id)?, &labels, cfg.seed)?;
    for w in &loaded.warnings {
        tracing::warn!("{w}");
    }
    let backend = backend_from_endpoints(&cfg.endpoints, cfg.http_settings())?;
    let result = run_experiment(&cfg, &loaded.manifest, &loaded.samples, backend, &RunOutput::to_dir(&out)).await?;
    println!("dataset\t{}", result.config.dataset_id);
    println!("method\t{}", result.config.method.display_name());
    println!("samples\t{}", result.records.len());
    println!("accuracy\t{:.1}", result.accuracy);
    println!("failed\t{}", result.failed);
    println!("out\t{}", out.display());
    Ok(())
}

fn cmd_report(runs: &[PathBuf], format: ReportFormat) -> Result<()> {
    let results = runs
        .iter()
        .map(|r| RunResult::load(r).with_context(|| format!("loading run {}", r.display())))
        .collect::<Result<Vec<_>>>()?;
    print!("{}", emit_report(&results, format));
    Ok(())
}

fn cmd_ablate(full: &Path, ablated: &Path, format: ReportFormat) -> Result<()> {
    let diff = diff_ablation(&RunResult::load(full)?, &RunResult::load(ablated)?)?;
    print!("{}", render_ablation(&[diff], format));
    Ok(())
}

async fn cmd_atlas(args: AtlasArgs) -> Result<()> {
    let backend = backend_from_endpoints(std::slice::from_ref(&args.embed_endpoint), HttpSettings::default())?;
    let options = AtlasOptions {
        embed_model: args.embed_model,
        embed_batch: args.embed_batch,
        tsne: TsneConfig {
            perplexity: args.perplexity,
            iterations: args.iters,
            seed: args.seed,
            ..TsneConfig::default()
        },
    };
    let report = run_atlas(&args.transcripts, backend.as_ref(), &options, &args.out).await?;
    print!("{}", report.render());
    Ok(())
}

async fn cmd_study(command: StudyCommand) -> Result<()> {
    match command {
        StudyCommand::Build {
            transcripts,
            config,
            manifest,
            store,
            k,
            seed,
        } => {
            let cfg = load_config(&config)?;
            let manifest_path = match manifest {
                Some(m) => m,
                None => transcripts
                    .parent()
                    .ok_or_else(|| anyhow!("transcript log has no parent directory"))?
                    .join(MANIFEST_FILE),
            };
            let manifest = read_manifest(&manifest_path)
                .with_context(|| format!("reading run manifest {}", manifest_path.display()))?;
            let source = cfg.dataset(&manifest.dataset_id)?;
            let samples = samples_from_manifest(&manifest, &source.root)?;
            let study = build_study(&transcripts, &samples, k, seed, &store)?;
            println!("items\t{}", study.items().len());
            println!("store\t{}", store.display());
        }
        StudyCommand::Serve { store, port, bind, ui } => {
            let store = Arc::new(StudyStore::open(&store)?);
            println!("serving {} items on http://{bind}:{port}/", store.items().len());
            serve_study(store, SocketAddr::new(bind, port), ui).await?;
        }
        StudyCommand::Summary { store, format } => {
            let summary = StudyStore::open(&store)?.summary();
            match format {
                SummaryFormat::Json => println!("{}", serde_json::to_string_pretty(&summary)?),
                SummaryFormat::Csv => print!("{}", summary_csv(&summary)),
            }
        }
    }
    Ok(())
}

fn cmd_manifest(config: &Path, dataset: &str, seed: Option<u64>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let mut source = cfg.dataset(dataset)?.clone();
    // Sample afresh even when the config already pins a manifest.
    source.manifest = None;
    let labels = cfg.label_set(dataset)?;
    let loaded = load_dataset(dataset, &source, &labels, seed.unwrap_or(cfg.seed))?;
    write_manifest(out, &loaded.manifest)?;
    println!("entries\t{}", loaded.manifest.len());
    println!("out\t{}", out.display());
    Ok(())
}

async fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => cmd_run(a).await,
        Command::Report { runs, format } => cmd_report(&runs, format),
        Command::Ablate { full, ablated, format } => cmd_ablate(&full, &ablated, format),
        Command::Atlas(a) => cmd_atlas(a).await,
        Command::Study { command } => cmd_study(command).await,
        Command::Manifest {
            config,
            dataset,
            seed,
            out,
        } => cmd_manifest(&config, &dataset, seed, &out),
        Command::Demo(a) => demo::write_demo(&a),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "maric=info,warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime");
    match runtime.block_on(dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

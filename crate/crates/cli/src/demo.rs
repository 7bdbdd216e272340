//! `maric demo`: a self-contained synthetic setup that runs offline against
//! the scripted mock backend.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use maric_core::datasets::write_manifest;
use maric_core::fixtures::{oracle_script, write_synthetic_folder};
use maric_core::LabelSet;

pub const DEMO_DATASET: &str = "synthetic";

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub per_class: usize,
    /// Every sample whose index is divisible by this is scripted wrong
    /// (0 scripts none wrong).
    #[arg(long, default_value_t = 10)]
    pub wrong_every: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Mock sleep before each chat reply.
    #[arg(long)]
    pub delay_ms: Option<u64>,
    /// Mock call log, relative to the output directory.
    #[arg(long)]
    pub call_log: Option<PathBuf>,
}

pub fn write_demo(args: &DemoArgs) -> Result<()> {
    let cifar = LabelSet::cifar10();
    let labels = LabelSet::new(DEMO_DATASET, cifar.labels().to_vec())?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let (manifest, samples) = write_synthetic_folder(&args.out.join("images"), &labels, args.per_class, args.seed)?;
    write_manifest(&args.out.join("manifest.tsv"), &manifest)?;

    let wrong_every = args.wrong_every;
    let mut script = oracle_script(&labels, &samples, |i| wrong_every > 0 && i % wrong_every == wrong_every - 1);
    script.delay_ms = args.delay_ms;
    script.call_log = args.call_log.clone();
    std::fs::write(args.out.join("mock.json"), serde_json::to_string_pretty(&script)?)?;

    let mut cfg = String::new();
    let _ = writeln!(cfg, "dataset_id = \"{DEMO_DATASET}\"");
    let _ = writeln!(cfg, "method = \"maric\"");
    let _ = writeln!(cfg, "model = \"mock-vlm\"");
    let _ = writeln!(cfg, "endpoints = [\"mock:mock.json\"]");
    let _ = writeln!(cfg, "seed = {}", args.seed);
    let _ = writeln!(cfg, "\n[datasets.{DEMO_DATASET}]");
    let _ = writeln!(cfg, "kind = \"folder\"");
    let _ = writeln!(cfg, "root = \"images\"");
    let _ = writeln!(cfg, "manifest = \"manifest.tsv\"");
    let names: Vec<String> = labels.names().iter().map(|n| format!("{{ name = \"{n}\" }}")).collect();
    let _ = writeln!(cfg, "labels = [{}]", names.join(", "));
    std::fs::write(args.out.join("maric.toml"), cfg)?;

    let wrong = if wrong_every == 0 { 0 } else { samples.len() / wrong_every };
    println!("samples\t{}", samples.len());
    println!("scripted_correct\t{}", samples.len() - wrong);
    println!("config\t{}", args.out.join("maric.toml").display());
    Ok(())
}

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use gme::pipeline::{self, OutputLock, RunConfig, RunLayout};

#[derive(Parser)]
#[command(name = "gme", version, about = "Grounded minimal editing of dialogue responses")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Defaults to <output>/config.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; re-derives every stage seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Mask confidence threshold used at inference.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Sentence-deletion temperature of the template sampler.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Output directory of the run.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or load the corpus, filter persona leakage and write statistics.
    PrepareData,
    /// Train attribution, mask classifier and recombiner.
    Train,
    /// Edit a case file with the trained models.
    Edit {
        /// Edit cases (defaults to the prepared test cases).
        #[arg(long)]
        cases: Option<PathBuf>,
        /// Result file (defaults to <output>/edits/test.jsonl).
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Score result files against their cases; several files are aggregated.
    Evaluate {
        #[arg(long)]
        cases: Option<PathBuf>,
        #[arg(long = "results", num_args = 1..)]
        results: Vec<PathBuf>,
    },
    /// Prepare, train, edit and evaluate the synthetic experiment.
    ReproduceSynthetic,
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match (&c.config, &c.output) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(out)) if RunLayout::new(out).config().exists() => RunConfig::load(&RunLayout::new(out).config())?,
        _ => RunConfig::default(),
    };
    if let Some(out) = &c.output {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(tau) = c.tau {
        cfg.sampler.tau = tau;
    }
    if let Some(eps) = c.epsilon {
        cfg.edit.epsilon = eps;
    }
    let problems = cfg.problems();
    if !problems.is_empty() {
        for p in &problems {
            eprintln!("config: {p}");
        }
        anyhow::bail!("{} configuration problem(s)", problems.len());
    }
    Ok(cfg)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let layout = RunLayout::new(&cfg.output_dir);
    match cli.command {
        Command::PrepareData => print_json(&pipeline::prepare_data(&cfg).context("prepare-data")?),
        Command::Train => print_json(&pipeline::train_all(&cfg).context("train")?),
        Command::Edit { cases, results } => {
            let cases = cases.unwrap_or_else(|| layout.data().test_cases);
            let results = results.unwrap_or_else(|| layout.root.join("edits").join("test.jsonl"));
            let _lock = OutputLock::acquire(&layout.root)?;
            let summary = pipeline::edit_file(&cfg, &cases, &results, None).context("edit")?;
            print_json(&summary)
        }
        Command::Evaluate { cases, results } => {
            let cases = cases.unwrap_or_else(|| layout.data().test_cases);
            let results = if results.is_empty() { vec![layout.root.join("edits").join("test.jsonl")] } else { results };
            let _lock = OutputLock::acquire(&layout.root)?;
            let report = pipeline::evaluate(&cfg, &results, &cases, &layout.root.join("eval")).context("evaluate")?;
            print_json(&report)
        }
        Command::ReproduceSynthetic => {
            let report = pipeline::reproduce(&cfg).context("reproduce-synthetic")?;
            print_json(&report.eval)?;
            eprintln!("stage seconds: {:?}", report.seconds);
            Ok(())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

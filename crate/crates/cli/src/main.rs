//! Command-line front end for the benchmark pipeline.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use markbench_core::fixtures::synth_corpus_dir;
use markbench_core::pipeline::{run_pipeline, RunConfig, RunOutcome, Stage};

#[derive(Parser)]
#[command(name = "markbench", version, about = "Watermark robustness benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override the run id.
    #[arg(long)]
    run_id: Option<String>,
}

impl RunArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        if let Some(dir) = &self.output_dir {
            cfg.run.output_dir = dir.clone();
        }
        if let Some(id) = &self.run_id {
            cfg.run.id = id.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Watermark the dataset images and persist the key material.
    Embed(RunArgs),
    /// Embed, then apply every configured attack to both arms.
    Attack(RunArgs),
    /// Run through scoring, quality measurement, and curve building.
    Evaluate(RunArgs),
    /// Run through attack ranking (leaderboards).
    Rank(RunArgs),
    /// Run the full pipeline including the report bundle.
    Report(RunArgs),
    /// Alias for `report`: execute every stage.
    RunAll(RunArgs),
    /// Generate a synthetic test corpus with a manifest.
    GenFixtures {
        /// Directory to create the corpus in.
        #[arg(long)]
        out: PathBuf,
        /// Number of images.
        #[arg(long)]
        count: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        /// 1 (grayscale) or 3 (RGB).
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let (args, stage) = match &cli.command {
        Command::Embed(a) => (a, Stage::Embed),
        Command::Attack(a) => (a, Stage::Attack),
        Command::Evaluate(a) => (a, Stage::Evaluate),
        Command::Rank(a) => (a, Stage::Rank),
        Command::Report(a) | Command::RunAll(a) => (a, Stage::Report),
        Command::GenFixtures { out, count, width, height, channels, seed } => {
            let manifest = synth_corpus_dir(out, *count, *width, *height, *channels, *seed)
                .with_context(|| format!("generating fixtures in {}", out.display()))?;
            println!("wrote {} images and a manifest to {}", manifest.len(), out.display());
            return Ok(());
        }
    };
    let cfg = args.load()?;
    let outcome = run_pipeline(&cfg, stage)
        .with_context(|| format!("run {} failed", cfg.run.id))?;
    print_outcome(&outcome);
    Ok(())
}

fn print_outcome(outcome: &RunOutcome) {
    println!("run directory: {}", outcome.run_dir.display());
    if outcome.executed.is_empty() {
        println!("executed: (nothing, all stages current)");
    } else {
        println!("executed: {}", outcome.executed.join(", "));
    }
    if !outcome.skipped.is_empty() {
        println!("skipped:  {}", outcome.skipped.join(", "));
    }
    for w in &outcome.warnings {
        println!("warning: {w}");
    }
}

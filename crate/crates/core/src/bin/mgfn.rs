use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mgfn::config::PipelineConfig;
use mgfn::pipeline::{Pipeline, Stage};

/// Multi-graph fusion pipeline for urban region embedding.
#[derive(Parser)]
#[command(name = "mgfn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "mgfn-out")]
    out: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic city and its targets.
    Synth,
    /// Bin a trips CSV into a multigraph.
    Ingest,
    /// Pairwise mobility graph distances.
    Distances,
    /// Cluster time bins and fuse them into patterns.
    Fuse,
    /// Train the embedding model.
    Train,
    /// Write region embeddings from the trained model.
    Embed,
    /// Score embeddings on regression and clustering targets.
    Eval,
    /// Write plot-data CSVs.
    Report,
    /// Synth followed by every later stage.
    Run,
}

fn execute(cli: Cli) -> mgfn::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    let pipeline = Pipeline::new(cfg, cli.out)?;
    let stage = match cli.command {
        Command::Run => return pipeline.run_synthetic().map(drop),
        Command::Synth => Stage::Synth,
        Command::Ingest => Stage::Ingest,
        Command::Distances => Stage::Distances,
        Command::Fuse => Stage::Fuse,
        Command::Train => Stage::Train,
        Command::Embed => Stage::Embed,
        Command::Eval => Stage::Eval,
        Command::Report => Stage::Report,
    };
    pipeline.run(stage)
}

fn main() -> ExitCode {
    let level = std::env::var("MGFN_LOG").unwrap_or_else(|_| "info".into());
    env_logger::Builder::new().parse_filters(&level).format_timestamp(None).init();

    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error kind={} code={} message={message:?}", e.kind(), e.exit_code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

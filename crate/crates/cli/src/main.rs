use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use prosogap::mushra::{MushraStore, TrialBundle};
use prosogap_cli::commands::{self, Context};
use prosogap_cli::config::{ExperimentConfig, BACKEND_URL_ENV};
use prosogap_cli::{server, CliError, Outcome, FATAL_EXIT};

#[derive(Parser)]
#[command(name = "prosogap", version, about = "Lookahead experiments for incremental text-to-speech")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-utterance stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Sample predicted and random lookahead words into the prediction cache.
    Prepare,
    /// Render every lookahead condition to features, mels and audio.
    Synthesize,
    /// Compute duration, energy and pitch error tables.
    Evaluate,
    /// Per-phoneme feature ranges and sentence deviation scores.
    Sensitivity,
    /// Write the listening-test trial bundle.
    ExportMushra,
    /// Run the listening-test HTTP service.
    ServeMushra,
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let path = cli.config.ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let env = std::env::var(BACKEND_URL_ENV).ok();
    let mut cfg = ExperimentConfig::load(&path, env.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.pipeline.seed = seed;
    }
    let ctx = Context::new(cfg, cli.workers)?;
    match cli.command {
        Command::Prepare => commands::prepare(&ctx),
        Command::Synthesize => commands::synthesize(&ctx),
        Command::Evaluate => commands::evaluate(&ctx),
        Command::Sensitivity => commands::sensitivity(&ctx),
        Command::ExportMushra => commands::export_mushra(&ctx),
        Command::ServeMushra => serve(&ctx),
    }
}

fn serve(ctx: &Context) -> Result<Outcome, CliError> {
    let bundle_dir = ctx.layout.mushra_dir().join("bundle");
    let bundle = TrialBundle::load(&bundle_dir)?;
    let store = MushraStore::open(bundle, ctx.cfg.pipeline.seed, &ctx.layout.mushra_dir().join("ratings.jsonl"))?;
    let app = server::router(store, bundle_dir, ctx.cfg.mushra.static_dir.clone());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&ctx.cfg.mushra.bind).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        server::serve(listener, app).await
    })?;
    Ok(Outcome::Clean)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            if outcome == Outcome::Partial {
                eprintln!("finished with skipped items; see errors.jsonl");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(FATAL_EXIT as u8)
        }
    }
}

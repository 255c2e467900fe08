mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use commands::Env;
use config::RunConfig;
use error::RunError;
use output::{sha256_hex, OutputDir};

/// Numerical experiments on concentration in noncompact variational problems.
#[derive(Debug, Parser)]
#[command(name = "concentra", version)]
struct Cli {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent sweep cells.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, short)]
    verbose: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_env("CONCENTRA_LOG")
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                RunError::Validation { path, message } => eprintln!("error: {path}: {message}"),
                RunError::Solver(_) => {
                    let rec = e.record().unwrap_or_default();
                    eprintln!("{rec}");
                }
                RunError::Io(err) => eprintln!("error: {err:#}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<(), RunError> {
    let raw = std::fs::read(&cli.config).with_context(|| format!("reading {}", cli.config.display()))?;
    let text = String::from_utf8(raw.clone()).map_err(|_| RunError::validation("config", "not valid UTF-8"))?;
    let cfg = RunConfig::parse(&text)?;
    let dir = cfg.string("output.directory", "out");
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(dir));
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(RunError::validation("--threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().context("configuring the thread pool")?;
    }
    let env = Env { cache_dir: std::env::var_os("CONCENTRA_CACHE").map(PathBuf::from) };
    let job = commands::plan(&cfg, &env)?;

    let hash = sha256_hex(&raw);
    let mut out = OutputDir::prepare(&out_dir)?;
    log::info!("running {} into {}", cfg.command, out_dir.display());
    match job(&mut out) {
        Ok(()) => {
            out.finish(cfg.command.name(), &hash, "ok")?;
            Ok(())
        }
        Err(e) => {
            if let Some(rec) = e.record() {
                let mut body = serde_json::to_string_pretty(&rec).context("serializing the error record")?;
                body.push('\n');
                out.write("error.json", "error", body.into_bytes())?;
            }
            out.finish(cfg.command.name(), &hash, "failed")?;
            Err(e)
        }
    }
}

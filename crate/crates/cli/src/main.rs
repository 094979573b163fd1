//! `fbx`: config-driven runner for obstacle-problem experiments.
//!
//! Exit codes: 0 success, 1 i/o failure, 2 invalid config, 3 numerical
//! failure, 4 failed acceptance check (with `--assert`).

mod config;
mod output;
mod report;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

use config::{Command, ExperimentConfig};
use output::{config_hash, OutDir};

#[derive(Parser, Debug)]
#[command(name = "fbx", version, about = "Obstacle-problem solver, blow-up diagnostics and classifier")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Exit with status 4 when an acceptance check fails.
    #[arg(long)]
    assert: bool,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn fail(code: u8, msg: &str) -> ExitCode {
    eprintln!("fbx: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let bytes = match std::fs::read(&cli.config) {
        Ok(b) => b,
        Err(e) => return fail(2, &format!("cannot read {}: {e}", cli.config.display())),
    };
    let cfg: ExperimentConfig = match serde_json::from_slice(&bytes) {
        Ok(c) => c,
        Err(e) => return fail(2, &format!("invalid config: {e}")),
    };
    let errors = cfg.validate(cli.command);
    if !errors.is_empty() {
        return fail(2, &format!("invalid config:\n  {}", errors.join("\n  ")));
    }
    let root = cli.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("fbx-out"));
    let out = match OutDir::create(root, config_hash(&bytes)) {
        Ok(o) => o,
        Err(e) => return fail(1, &format!("cannot create output directory: {e}")),
    };
    let config_dir = cli.config.parent().unwrap_or(Path::new("."));
    let outcome = match run::run(&cfg, cli.command, config_dir, out) {
        Ok(o) => o,
        Err(e) => return fail(e.exit_code() as u8, &e.message()),
    };
    if let Some(f) = &outcome.failure {
        return fail(f.exit_code() as u8, &f.message());
    }
    if cli.assert && !outcome.failed_checks.is_empty() {
        return fail(4, &format!("acceptance checks failed:\n  {}", outcome.failed_checks.join("\n  ")));
    }
    let m = &outcome.manifest;
    eprintln!("fbx: {} finished in {:.1}s, {} outputs", m.command, m.wall_clock_seconds, m.outputs.len());
    for c in &outcome.failed_checks {
        eprintln!("fbx: warning: {c}");
    }
    ExitCode::SUCCESS
}

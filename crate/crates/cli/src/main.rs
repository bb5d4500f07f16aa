//! `ultralong`: RoPE tables, corpus packing, long-context evaluation and the
//! toy extension lab behind one command.
//!
//! Exit codes: 0 success, 2 configuration, 3 I/O or format, 4 endpoint
//! failure, 5 verification failure.

mod config;
mod evalgen;
mod harness;
mod pack;
mod rope_table;
mod toylab;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ultralong_core::{Error, Result};

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("ULTRALONG_BUILD_REV"), ")");

#[derive(Debug, Parser)]
#[command(name = "ultralong", version = VERSION, about)]
struct Cli {
    /// Worker threads (default: available cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Export a scaled RoPE frequency table.
    RopeTable(rope_table::RopeTableArgs),
    /// Resample a corpus by length bucket and pack it into fixed-length sequences.
    Pack(pack::PackArgs),
    /// Generate passkey needle-in-a-haystack cases.
    GenNiah(evalgen::GenNiahArgs),
    /// Generate multi-needle retrieval cases.
    GenRuler(evalgen::GenRulerArgs),
    /// Send a case file to a chat-completion endpoint.
    Run(harness::RunArgs),
    /// Score responses and aggregate them into a report.
    Score(harness::ScoreArgs),
    /// Render a report as a heatmap and bucket summary.
    Report(harness::ReportArgs),
    /// Toy transformer experiments.
    #[command(subcommand)]
    Toylab(toylab::ToylabCommand),
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(format!("--jobs: {e}")))?;
    }
    match cli.command {
        Command::RopeTable(a) => rope_table::run(a),
        Command::Pack(a) => pack::run(a),
        Command::GenNiah(a) => evalgen::niah(a),
        Command::GenRuler(a) => evalgen::ruler(a),
        Command::Run(a) => harness::run(a),
        Command::Score(a) => harness::score(a),
        Command::Report(a) => harness::report(a),
        Command::Toylab(c) => toylab::run(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

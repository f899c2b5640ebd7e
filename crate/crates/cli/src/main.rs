#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod error;
mod manifest;
mod pipeline;

use error::CliError;

/// Runs nanocavity simulation scenarios.
#[derive(Debug, Parser)]
#[command(name = "nanocavity", version)]
struct Cli {
    /// Caps the worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run a scenario, e.g. `figures/fig1`, resolved under the config root.
    Run {
        scenario: String,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to out/<scenario name>.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Tabulate far-field figure ratios a/b of two runs.
    Compare {
        /// Manifest file or run directory.
        a: PathBuf,
        b: PathBuf,
        /// Print the table as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Parse and validate a scenario without running it.
    ValidateConfig { scenario: String },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.cmd {
        Cmd::Run { scenario, seed, out_dir } => {
            let (dir, m) = manifest::run(&scenario, &manifest::RunOptions { seed, out_dir })?;
            println!(
                "{}: {} files in {} ({:.1} s)",
                m.scenario,
                m.outputs.len() + 1,
                dir.display(),
                m.wall_time_s
            );
            Ok(())
        }
        Cmd::Compare { a, b, json } => {
            let (ma, mb) = (manifest::read_manifest(&a)?, manifest::read_manifest(&b)?);
            let rows = manifest::compare(&ma, &mb)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&rows).expect("rows serialize"));
            } else {
                print!("{}", manifest::format_report(&ma, &mb, &rows));
            }
            Ok(())
        }
        Cmd::ValidateConfig { scenario } => {
            let (path, _, s) = manifest::load_scenario(&scenario)?;
            let stages: Vec<&str> = s.stages.iter().map(|s| s.name()).collect();
            println!("{}: ok ({}; stages {})", s.name, path.display(), stages.join(", "));
            Ok(())
        }
    }
}

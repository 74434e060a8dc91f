use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use linma_core::config::ExperimentConfig;
use linma_core::experiments::{registry_listing, resolve_output_dir, run_experiment};
use linma_core::Error;

/// Linearized Monge–Ampère numerical laboratory.
#[derive(Parser)]
#[command(name = "linma", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config.
    Run {
        config: PathBuf,
        /// Report directory (overrides the config and LINMA_OUTPUT_ROOT).
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Worker threads for independent cases (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Default root for report directories.
        #[arg(long, env = "LINMA_OUTPUT_ROOT", hide_env_values = true)]
        output_root: Option<PathBuf>,
    },
    /// List registered potentials, domains and experiment kinds.
    List,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

fn exit_for(e: &Error) -> u8 {
    if e.is_solver_failure() {
        EXIT_SOLVER
    } else {
        EXIT_CONFIG
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for line in registry_listing() {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            output_dir,
            threads,
            seed,
            output_root,
        } => {
            let mut cfg = match ExperimentConfig::from_path(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = resolve_output_dir(&cfg, &config, output_dir.as_deref(), output_root.as_deref());
            match run_experiment(&cfg, &dir, threads) {
                Ok(report) => {
                    let fails: Vec<_> = report.failures().collect();
                    println!(
                        "{}: {} invariants, {} failed; report in {}",
                        report.kind,
                        report.summary.invariants.len(),
                        fails.len(),
                        dir.display()
                    );
                    for f in &fails {
                        println!("FAIL {} [{}] {}", f.name, f.case.as_deref().unwrap_or("all"), f.detail);
                    }
                    if fails.is_empty() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_INVARIANT)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_for(&e))
                }
            }
        }
    }
}

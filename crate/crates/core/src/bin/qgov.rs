use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qgov::cli::{cmd_optimize, cmd_reproduce, cmd_run, configure_threads, exit_code, EXIT_USAGE};
use qgov::governor::ScenarioKind;

#[derive(Parser)]
#[command(name = "qgov", version, about = "Pulse synthesis and noise-suppression cycles for a four-level system")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the distilling pulse and write it as a field file.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one scenario with one noise seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Field file; not needed for the uncontrolled scenario.
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<ScenarioKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run all rows of a scenario table.
    Reproduce {
        #[arg(long, value_parser = clap::value_parser!(u32).range(2..=3))]
        table: u32,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        outdir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Optimize { config, out } => cmd_optimize(&config, &out),
        Command::Run { config, field, scenario, seed, out } => cmd_run(&config, field.as_deref(), scenario, seed, &out),
        Command::Reproduce { table, config, outdir } => cmd_reproduce(table, &config, &outdir),
    });
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

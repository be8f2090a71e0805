use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use roisurv_cli::{cmd_gen, cmd_report, cmd_run, RunConfig};

#[derive(Parser)]
#[command(name = "roisurv", version, about = "Multi-lesion survival modelling benchmark")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort described by the config's [generate] table.
    Gen {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Run the strategy × model grid.
    Run {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Rebuild summaries and the effect matrix from a results directory.
    Report {
        results_dir: PathBuf,
        /// Reference scheme label (defaults to the one recorded by `run`).
        #[arg(short, long)]
        reference: Option<String>,
        /// Write the tables here instead of into the results directory.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match &cli.command {
        Command::Gen { config } => RunConfig::load(config).and_then(|c| cmd_gen(&c)).map(|dir| {
            println!("cohort written to {}", dir.display());
        }),
        Command::Run { config } => RunConfig::load(config).and_then(|c| cmd_run(&c)).map(|dir| {
            println!("results written to {}", dir.display());
        }),
        Command::Report {
            results_dir,
            reference,
            out,
        } => cmd_report(results_dir, reference.as_deref(), out.as_deref()).map(|rows| {
            for r in rows {
                let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.4}"));
                println!(
                    "{:<40} median {} delta {} {}",
                    r.scheme,
                    fmt(r.median),
                    fmt(r.delta_median),
                    r.stars
                );
            }
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

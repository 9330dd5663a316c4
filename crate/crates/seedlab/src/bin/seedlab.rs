use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seedlab::cli::{cmd_overlap, cmd_report, cmd_sweep, cmd_train, cmd_trajectory};
use seedlab::config::RunConfig;
use seedlab::Error;

#[derive(Parser)]
#[command(
    name = "seedlab",
    version,
    about = "Train toy diffusion samplers and measure their reliability under seed-vector shifts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to out_dir from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps and training.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured model and write checkpoints.
    Train(RunArgs),
    /// Run the shift-sweep grid against trained checkpoints.
    Sweep(RunArgs),
    /// Emit the distribution-overlap table for the configured grids.
    Overlap(RunArgs),
    /// Record paired (base, shifted) reverse-process trajectories.
    Trajectory(RunArgs),
    /// Render plots and a markdown summary from a completed run directory.
    Report {
        /// Directory holding sweep/overlap/trajectory outputs.
        #[arg(long)]
        run_dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(args) => {
            let config = RunConfig::load(&args.config)?;
            let out = args.out.clone().unwrap_or_else(|| PathBuf::from(&config.out_dir));
            cmd_train(&config, &out, args.seed, args.jobs)?;
        }
        Command::Sweep(args) => {
            let config = RunConfig::load(&args.config)?;
            let out = args.out.clone().unwrap_or_else(|| PathBuf::from(&config.out_dir));
            cmd_sweep(&config, &out, args.seed, args.jobs)?;
        }
        Command::Overlap(args) => {
            let config = RunConfig::load(&args.config)?;
            let out = args.out.clone().unwrap_or_else(|| PathBuf::from(&config.out_dir));
            cmd_overlap(&config, &out, args.seed)?;
        }
        Command::Trajectory(args) => {
            let config = RunConfig::load(&args.config)?;
            let out = args.out.clone().unwrap_or_else(|| PathBuf::from(&config.out_dir));
            cmd_trajectory(&config, &out, args.seed)?;
        }
        Command::Report { run_dir } => {
            cmd_report(&run_dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = serde_json::json!({
                "error": { "kind": e.kind(), "message": e.to_string() }
            });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pwh_cli::config::ExperimentConfig;
use pwh_cli::run::{output_dir, run_experiment, summary_text, synth, RunError};

/// Identify parallel Wiener-Hammerstein systems from Volterra kernels.
#[derive(Parser)]
#[command(name = "pwhid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory (default: the config's out_dir, else out/<name>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run identification and write all artifacts.
    Run {
        /// Config path, or a bundled name such as `paper_sec5`.
        config: String,
    },
    /// Only synthesize the kernels of a [system] config.
    Synth { config: String },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cli: &Cli) -> Result<(), RunError> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(config)?;
            let out = output_dir(&cfg, cli.out.as_deref());
            let outcome = run_experiment(&cfg, &out)?;
            if !cli.quiet {
                print!("{}", summary_text(&outcome.summary, &outcome.derivatives));
                println!("artifacts       {}", out.display());
            }
        }
        Command::Synth { config } => {
            let cfg = ExperimentConfig::load(config)?;
            let out = output_dir(&cfg, cli.out.as_deref());
            let path = synth(&cfg, &out)?;
            if !cli.quiet {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

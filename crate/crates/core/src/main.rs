use clap::{Parser, Subcommand};
use eiso_core::cli::{self, report, ExperimentConfig, RunError};
use eiso_core::par;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "eiso",
    version,
    about = "Empirical individual-state observability experiments"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// Directory for report files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Reserved; the pipeline is deterministic and does not use it.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sliding-window E-ISO over a simulated trajectory.
    Run { config: PathBuf },
    /// Compare sensor sets of a linear system.
    Sensors { config: PathBuf },
}

fn execute(command: &Command, out: &Path) -> Result<String, RunError> {
    match command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(config)?;
            let rep = cli::run_experiment(&cfg)?;
            report::emit_experiment(&rep, out)?;
            let observable = rep.windows.iter().filter(|r| r.observable).count();
            Ok(format!(
                "{} rows ({observable} observable) written to {}",
                rep.windows.len(),
                out.display()
            ))
        }
        Command::Sensors { config } => {
            let cfg = ExperimentConfig::load(config)?;
            let rep = cli::sensor_selection_study(&cfg)?;
            report::emit_sensors(&rep, out)?;
            let fit = rep.r_squared.map_or("n/a".to_string(), |r| format!("{r:.4}"));
            Ok(format!(
                "{} sensor sets, R^2 = {fit} over {} points, written to {}",
                rep.sensors.len(),
                rep.fit_points,
                out.display()
            ))
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(k) = args.threads {
        if k == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        par::set_threads(k);
    }
    let _ = args.seed;
    match execute(&args.command, &args.out) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

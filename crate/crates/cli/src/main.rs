use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seaice_cli::commands::{self, STUDY_GRID};
use seaice_cli::config::RunConfig;
use seaice_cli::{CliError, CliResult};

/// Viscous-plastic sea-ice simulator with goal-oriented error estimation.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and write checkpoint, VTK snapshots and a run summary.
    Run { config: PathBuf },
    /// Solve the dual problem for a stored trajectory and estimate the goal error.
    Estimate {
        config: PathBuf,
        /// Trajectory checkpoint (default: <output dir>/trajectory.chk).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the adaptive solve-estimate-refine loop.
    Adapt { config: PathBuf },
    /// Compare a study CSV with the reference table and print effort figures.
    Report { csv: PathBuf },
    /// Run the 12-cell mesh/step study of the 1-day benchmark.
    Study {
        config: PathBuf,
        /// Compute the reference value on a mesh with this many subdivisions...
        #[arg(long, default_value_t = 128)]
        reference_subdivisions: usize,
        /// ...and this step in hours (ignored when output.reference_j is set).
        #[arg(long, default_value_t = 0.25)]
        reference_k_hours: f64,
        /// Skip the reference run; effectivities are then left empty.
        #[arg(long)]
        no_reference: bool,
    },
}

fn load(path: &PathBuf) -> CliResult<RunConfig> {
    let cfg = RunConfig::load(path)?;
    if let Some(w) = cfg.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run { config } => {
            let s = commands::cmd_run(&load(&config)?)?;
            println!("J = {:.8} after {} steps", s.j_value, s.n_steps);
        }
        Command::Estimate { config, checkpoint } => {
            let r = commands::cmd_estimate(&load(&config)?, checkpoint.as_deref())?;
            println!(
                "J = {:.8}  eta = {:.4e}  eta_h = {:.4e}  eta_k = {:.4e}  eta_beta = {:.4e}",
                r.j_value, r.eta_total, r.eta_h, r.eta_k, r.eta_beta
            );
            if let Some(e) = r.effectivity {
                println!("effectivity = {e:.4}");
            }
        }
        Command::Adapt { config } => {
            let rec = commands::cmd_adapt(&load(&config)?)?;
            for it in &rec.iterations {
                println!(
                    "{:>2} {:>6} el {:>7} unknowns k = {:>6} h  J = {:.6}  eta = {:.3e}  {:?}",
                    it.iteration, it.elements, it.unknowns, it.k_hours, it.j, it.eta_total, it.decision
                );
            }
        }
        Command::Report { csv } => print!("{}", commands::cmd_report(&csv)?),
        Command::Study {
            config,
            reference_subdivisions,
            reference_k_hours,
            no_reference,
        } => {
            let cfg = load(&config)?;
            let reference = (!no_reference).then_some((reference_subdivisions, reference_k_hours));
            let rows = commands::cmd_study(&cfg, &STUDY_GRID, reference)?;
            print!("{}", seaice_cli::report::format_report(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grampa_harness::config::ExperimentSpec;
use grampa_harness::experiment::run_experiment;
use grampa_harness::output::write_run;
use grampa_harness::ptc::{estimate_ptc, write_ptc};
use grampa_harness::Result;

#[derive(Parser)]
#[command(name = "grampa", about = "Run seeded analysis-recovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of every sweep point and write the results.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Override the trial count of the config.
        #[arg(long)]
        trials: Option<usize>,
        /// Override the config's seed_base.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate the 50% success transition for each delta of `ptc_curve`.
    Ptc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            workers,
            trials,
            seed,
        } => {
            let mut spec = ExperimentSpec::load(&config)?;
            if let Some(t) = trials {
                spec.trials = t;
            }
            if let Some(s) = seed {
                spec.seed_base = s;
            }
            spec.validate()?;
            let result = run_experiment(&spec, workers)?;
            write_run(&out, &spec, &result)?;
            for s in &result.summaries {
                eprintln!(
                    "{}: median NSNR {:.2} dB, success {:.2}, failed {}",
                    s.point.key(),
                    s.median_nsnr_db,
                    s.success_rate,
                    s.failed
                );
            }
        }
        Command::Ptc { config, out, workers } => {
            let spec = ExperimentSpec::load(&config)?;
            let estimates = estimate_ptc(&spec, workers)?;
            write_ptc(&out, &estimates)?;
            for e in &estimates {
                eprintln!(
                    "delta {}: rho50 {:.4} in [{:.4}, {:.4}]",
                    e.delta, e.rho50, e.bracket_lo, e.bracket_hi
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

//! Command-line front end.
//!
//! Exit codes: 0 success, 1 output failure, 2 config or usage error,
//! 3 input data error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::experiment::{Overrides, Replay, RunError, Simulation};
use crate::montecarlo::BadDebtReport;
use crate::policy::uc_frontier;
use crate::report::{
    write_replay, write_sigma_outputs, write_simulation, Provenance, SigmaDocument,
    SimulationDocument,
};

#[derive(Debug, Parser)]
#[command(name = "liqspiral", version, about = "Liquidation-spiral simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the policy-comparison Monte Carlo experiment.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Replay recorded liquidations against a price series.
    Replay {
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// LTV separating the two ΔLTV populations.
        #[arg(long)]
        frontier: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the LTV above which liquidations raise LTV.
    Frontier {
        #[arg(allow_negative_numbers = true)]
        incentive: f64,
    },
    /// Fit slippage factors to recorded liquidations.
    FitSlippage {
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        frontier: Option<f64>,
        /// Also fit records bound by the closing factor or the collateral.
        #[arg(long)]
        include_all: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn output_error(e: impl std::fmt::Display) -> RunError {
    RunError::Output {
        path: String::new(),
        message: e.to_string(),
    }
}

pub fn summary_table(report: &BadDebtReport) -> String {
    let mut out = format!(
        "{:<32} {:>16} {:>10} {:>16} {:>16}\n",
        "policy", "mean_final_usd", "p_bad_debt", "tail_mean_usd", "median_usd"
    );
    for p in &report.policies {
        out.push_str(&format!(
            "{:<32} {:>16.2} {:>10.4} {:>16.2} {:>16.2}\n",
            p.label, p.mean_final, p.prob_bad_debt, p.tail_mean, p.median_final
        ));
    }
    out
}

pub fn cmd_simulate(config: PathBuf, overrides: Overrides) -> Result<(), RunError> {
    let sim = Simulation::load(&config, &overrides)?;
    log::info!(
        "simulating {} trajectories x {} policies, horizon {}",
        sim.trajectories.len(),
        sim.scenario.policies.len(),
        sim.scenario.horizon
    );
    let report = sim.run()?;
    let doc = SimulationDocument {
        provenance: Provenance::new(&sim.config_sha256, Some(sim.seed)),
        report,
    };
    let written = write_simulation(&sim.output_dir, &doc).map_err(output_error)?;
    for p in &written {
        log::info!("wrote {}", p.display());
    }
    print!("{}", summary_table(&doc.report));
    Ok(())
}

pub fn cmd_replay(
    config: PathBuf,
    out_dir: Option<PathBuf>,
    frontier: Option<f64>,
) -> Result<(), RunError> {
    let replay = Replay::load(&config, out_dir, frontier)?;
    let outcome = replay.run()?;
    let written = write_replay(
        &replay.output_dir,
        &Provenance::new(&replay.config_sha256, None),
        &outcome.trace,
        &replay.prices,
        replay.frontier,
        replay.bins,
        &outcome.sigma,
    )
    .map_err(output_error)?;
    for p in &written {
        log::info!("wrote {}", p.display());
    }
    let above = outcome
        .trace
        .events
        .iter()
        .filter(|e| e.ltv_before > replay.frontier)
        .count();
    println!(
        "{} trace points, {} events ({} below / {} above frontier {:.6})",
        outcome.trace.points.len(),
        outcome.trace.events.len(),
        outcome.trace.events.len() - above,
        above,
        replay.frontier
    );
    print_sigma(&outcome.sigma);
    Ok(())
}

fn print_sigma(s: &crate::replay::SigmaReport) {
    match &s.summary {
        Some(m) => {
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
            println!(
                "sigma: {} fitted ({} before / {} after crossing), median before {} after {} all {:.4}",
                s.fitted,
                s.count_before,
                s.count_after,
                fmt(m.median_before),
                fmt(m.median_after),
                m.median_all
            );
        }
        None => println!(
            "sigma: {}",
            s.footnote.as_deref().unwrap_or("nothing to fit")
        ),
    }
    if s.unprofitable > 0 {
        println!("{} unprofitable-incentive records", s.unprofitable);
    }
}

pub fn cmd_frontier(incentive: f64) -> Result<(), RunError> {
    let f = uc_frontier(incentive).map_err(|e| RunError::Config(e.to_string()))?;
    println!("{f:.6}");
    Ok(())
}

pub fn cmd_fit_slippage(
    config: PathBuf,
    out_dir: Option<PathBuf>,
    frontier: Option<f64>,
    include_all: bool,
) -> Result<(), RunError> {
    let mut replay = Replay::load(&config, out_dir, frontier)?;
    replay.fit.include_all |= include_all;
    let outcome = replay.run()?;
    let doc = SigmaDocument {
        provenance: Provenance::new(&replay.config_sha256, None),
        sigma: outcome.sigma,
    };
    write_sigma_outputs(&replay.output_dir, &doc).map_err(output_error)?;
    print_sigma(&doc.sigma);
    Ok(())
}

fn warn_unused(seed: Option<u64>, workers: Option<usize>) {
    if seed.is_some() || workers.is_some() {
        log::warn!("--seed and --workers have no effect on replays");
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Simulate {
            config,
            seed,
            workers,
            out_dir,
        } => cmd_simulate(
            config,
            Overrides {
                seed,
                workers,
                out_dir,
            },
        ),
        Command::Replay {
            config,
            out_dir,
            frontier,
            seed,
            workers,
        } => {
            warn_unused(seed, workers);
            cmd_replay(config, out_dir, frontier)
        }
        Command::Frontier { incentive } => cmd_frontier(incentive),
        Command::FitSlippage {
            config,
            out_dir,
            frontier,
            include_all,
            seed,
            workers,
        } => {
            warn_unused(seed, workers);
            cmd_fit_slippage(config, out_dir, frontier, include_all)
        }
    };
    let _ = std::io::stdout().flush();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

//! Command-line front end: scenario-driven flows, probes, Moser suites,
//! verification ledgers and report rendering.
//!
//! Exit codes: 0 when every selected check passed, 1 when the ledger
//! contains a failed check, 2 on execution or validation errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use riccilab_core::report::{self, OutputPaths};
use riccilab_core::scenario::{self, Overrides};

#[derive(Parser)]
#[command(
    name = "riccilab",
    about = "Flow integration, geometric probes and estimate ledgers on chart geometries",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for node-parallel kernels (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Seed override (defaults to the scenario's seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Snapshot cadence override in time units.
    #[arg(long)]
    checkpoint_every: Option<f64>,
}

impl ScenarioArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the scenario's flow and dump trace.csv / trace.json.
    Flow(ScenarioArgs),
    /// Probe the scenario's initial geometry (diameter, volume, excess,
    /// conjugate radius, Sobolev constant) into geometry.json.
    Probe(ScenarioArgs),
    /// Run the scenario's Moser suite and write its ledger.
    Moser(ScenarioArgs),
    /// Run every selected check of the scenario and write the full ledger.
    Verify(ScenarioArgs),
    /// Render report.txt from a persisted ledger.
    Report {
        /// Path to ledger.json.
        #[arg(long)]
        ledger: PathBuf,
        /// Output directory (report.txt is also printed to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.workers > 0 {
        if let Err(e) = rayon_global(cli.workers) {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(all_pass) => {
            if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn rayon_global(workers: usize) -> Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(command: Command) -> Result<bool, Box<dyn std::error::Error>> {
    match command {
        Command::Flow(args) => {
            let paths = OutputPaths::new(&args.out);
            let run = scenario::run_scenario(&args.scenario, &args.overrides(), Some(&paths))?;
            match &run.trace {
                Some(trace) => {
                    let last = trace.last();
                    println!(
                        "flow finished: t = {}, sup|Rm| = {:.6e}, sup|Ric| = {:.6e} ({:?})",
                        last.t, last.diag.sup_rm, last.diag.sup_ric, trace.termination
                    );
                }
                None => println!("scenario has no [flow] section; nothing integrated"),
            }
            Ok(true)
        }
        Command::Probe(args) => {
            let paths = OutputPaths::new(&args.out);
            let rep = scenario::probe_scenario(&args.scenario, &args.overrides(), Some(&paths))?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
            Ok(true)
        }
        Command::Moser(args) | Command::Verify(args) => {
            let paths = OutputPaths::new(&args.out);
            let run = scenario::run_scenario(&args.scenario, &args.overrides(), Some(&paths))?;
            print!("{}", report::render_report(&run.ledger));
            Ok(run.ledger.all_pass())
        }
        Command::Report { ledger, out } => {
            let ledger = report::read_ledger(&ledger)?;
            let text = report::render_report(&ledger);
            if let Some(dir) = out {
                report::write_atomic(&OutputPaths::new(dir).report(), &text)?;
            }
            print!("{text}");
            Ok(ledger.all_pass())
        }
    }
}

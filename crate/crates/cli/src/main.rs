use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use srbm_cli::commands::ConvergeOutcome;
use srbm_cli::{run_certify, run_check, run_converge, run_simulate, CliError, LoadedManifest, Mode, Options};

/// Simulate and verify reflected Brownian motion from a JSON manifest.
#[derive(Parser)]
#[command(name = "srbm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Audit the domain and reflection field; writes check.json.
    Check(Args),
    /// Run the scheme over many paths; writes path CSVs and summaries.
    Simulate(Args),
    /// Refinement sweep against an exact reflection map, or a tightness table.
    Converge(Args),
    /// Evaluate oscillation certificates on sliding windows.
    Certify(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Simulate even if the assumption check fails.
    #[arg(long)]
    force: bool,
    /// Report modulus frequencies instead of oracle gaps.
    #[arg(long)]
    tightness_only: bool,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

fn run(command: Command) -> Result<String, CliError> {
    let (args, mode) = match command {
        Command::Check(a) => (a, Mode::Check),
        Command::Simulate(a) => (a, Mode::Simulate),
        Command::Converge(a) => (a, Mode::Converge),
        Command::Certify(a) => (a, Mode::Certify),
    };
    let m = LoadedManifest::load(&args.manifest)?;
    let opts = Options {
        force: args.force,
        tightness_only: args.tightness_only,
        out: args.out,
        seed: args.seed,
    };
    Ok(match mode {
        Mode::Check => {
            let r = run_check(&m, &opts)?;
            format!("check passed: a = {}, L = {}", r.margins.a, r.margins.lipschitz)
        }
        Mode::Simulate => {
            let s = run_simulate(&m, &opts)?;
            format!(
                "simulated {} paths; mean W(T) = {:?}; {} jump events",
                s.paths, s.w_terminal_mean, s.events_total
            )
        }
        Mode::Converge => match run_converge(&m, &opts)? {
            ConvergeOutcome::Gaps(r) => {
                let medians: Vec<f64> = r.rows.iter().map(|row| row.median_gap).collect();
                format!(
                    "{} median gaps {medians:?}; strictly decreasing: {}",
                    r.oracle, r.strictly_decreasing
                )
            }
            ConvergeOutcome::Tightness(r) => format!(
                "tightness table with {} rows; nonincreasing: {}",
                r.table.rows.len(),
                r.table.nonincreasing
            ),
        },
        Mode::Certify => {
            let s = run_certify(&m, &opts)?;
            format!(
                "{} windows: {} verified, {} hypothesis not met, 0 violations",
                s.windows, s.verified, s.hypothesis_not_met
            )
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

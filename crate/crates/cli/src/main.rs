use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sidapbc_cli::{cmd_count_pdes, cmd_simulate, cmd_verify, parse, LoadedConfig};

#[derive(Parser)]
#[command(name = "sidapbc", version, about = "Verify and simulate energy-shaping controllers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every residual and invariant check for the configured system.
    Verify(RunArgs),
    /// Simulate the closed loop and write a CSV trajectory plus a JSON summary.
    Simulate(RunArgs),
    /// Number of independent kinetic-energy PDEs for `s` unactuated directions.
    CountPdes { s: u64 },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

const EXIT_FAIL: u8 = 1;
const EXIT_SCHEMA: u8 = 2;

fn load(args: &RunArgs) -> Result<LoadedConfig, String> {
    let bytes = fs::read(&args.config).map_err(|e| format!("cannot read {}: {e}", args.config.display()))?;
    parse(&bytes, args.seed).map_err(|e| e.to_string())
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), String> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    }
    fs::write(path, bytes).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn json(v: &impl serde::Serialize) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("reports serialize");
    s.push(b'\n');
    s
}

fn verify(args: &RunArgs) -> Result<u8, (u8, String)> {
    let cfg = load(args).map_err(|e| (EXIT_SCHEMA, e))?;
    let report = cmd_verify(&cfg).map_err(|e| (EXIT_FAIL, e.to_string()))?;
    write(&args.out.join(&cfg.config.report_file), &json(&report)).map_err(|e| (EXIT_SCHEMA, e))?;
    for c in &report.checks {
        println!(
            "{} {:<28} {:>12.4e}  (tol {:e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.max_residual,
            c.tolerance
        );
    }
    Ok(if report.passed { 0 } else { EXIT_FAIL })
}

fn simulate(args: &RunArgs) -> Result<u8, (u8, String)> {
    let cfg = load(args).map_err(|e| (EXIT_SCHEMA, e))?;
    let (traj, summary) = cmd_simulate(&cfg).map_err(|e| (EXIT_FAIL, e.to_string()))?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv).map_err(|e| (EXIT_SCHEMA, e.to_string()))?;
    write(&args.out.join(&cfg.config.trajectory_file), &csv).map_err(|e| (EXIT_SCHEMA, e))?;
    write(&args.out.join(&cfg.config.report_file), &json(&summary)).map_err(|e| (EXIT_SCHEMA, e))?;
    println!(
        "converged: {}  final norm: {:.3e}  H_d violations: {}",
        summary.converged, summary.final_norm, summary.monotonicity_violations
    );
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Verify(a) => verify(a),
        Command::Simulate(a) => simulate(a),
        Command::CountPdes { s } => {
            println!("{}", cmd_count_pdes(*s));
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

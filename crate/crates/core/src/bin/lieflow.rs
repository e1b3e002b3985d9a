use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use lieflow::scenario::{run, Command, Overrides};

#[derive(Parser)]
#[command(
    name = "lieflow",
    version,
    about = "Affine and bilinear control systems on matrix Lie groups"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Multiplies every tolerance.
    #[arg(long, default_value_t = 1.0)]
    tol_scale: f64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Trajectories by every applicable method.
    Simulate(Common),
    /// Property suite on the scenario's system.
    Verify(Common),
    /// Rank condition, probe, certificates and verdict.
    Analyze(Common),
    /// Reachable clouds and saturation coverage.
    Reach(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Verify(a) => (Command::Verify, a),
        Cmd::Analyze(a) => (Command::Analyze, a),
        Cmd::Reach(a) => (Command::Reach, a),
    };
    let overrides = Overrides {
        seed: args.seed,
        tol_scale: args.tol_scale,
    };
    let start = Instant::now();
    match run(command, &args.config, &args.out, overrides) {
        Ok(summary) => {
            for c in &summary.checks {
                let status = if c.pass { "PASS" } else { "FAIL" };
                eprintln!(
                    "{status} {} residual={:.3e} tolerance={:.3e}",
                    c.name, c.residual, c.tolerance
                );
            }
            eprintln!("wall_time={:.3}s", start.elapsed().as_secs_f64());
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kinetic_chain::harness::{emit_report, run_with, Kind, Overrides, Preset, RunConfig};

#[derive(Parser)]
#[command(name = "kinetic-chain", version, about = "Noisy harmonic chain experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Kernel identities, chain checks and limit constants.
    Constants(Common),
    /// Characteristic function of the scaled additive functional.
    Charfn(Common),
    /// Convergence rates along the N ladder and the tail-probability bound.
    Rates(Common),
    /// Kinetic solver against its path representation.
    KineticSolve(Common),
    /// L1 decay of the scattering semigroup.
    Semigroup(Common),
    /// Lattice conservation and the lattice to kinetic comparison.
    LatticeSim(Common),
    /// Every acceptance criterion.
    VerifyAll(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration; without it the preset defaults are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["quick", "paper"])]
    preset: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match cli.command {
        Command::Constants(c) => (Kind::Constants, c),
        Command::Charfn(c) => (Kind::Charfn, c),
        Command::Rates(c) => (Kind::Rates, c),
        Command::KineticSolve(c) => (Kind::KineticSolve, c),
        Command::Semigroup(c) => (Kind::Semigroup, c),
        Command::LatticeSim(c) => (Kind::LatticeSim, c),
        Command::VerifyAll(c) => (Kind::VerifyAll, c),
    };
    match execute(kind, common) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(true)` when no check failed.
fn execute(kind: Kind, c: Common) -> kinetic_chain::Result<bool> {
    let overrides = Overrides {
        kind: Some(kind),
        seed: c.seed,
        preset: c.preset.as_deref().map(str::parse::<Preset>).transpose()?,
        out: c.out,
    };
    let text = match &c.config {
        Some(path) => std::fs::read_to_string(path)?,
        None => String::new(),
    };
    let cfg = RunConfig::from_toml_str(&text, &overrides)?;
    eprintln!(
        "{} (preset {:?}, seed {}) -> {}",
        kind,
        cfg.preset,
        cfg.seed,
        cfg.out.display()
    );
    let record = run_with(&cfg, |c| println!("{}", c.line()))?;
    print!("{}", emit_report(std::slice::from_ref(&record)));
    Ok(!record.any_failed())
}

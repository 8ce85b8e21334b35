use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sontag_cli::{cmd_roa, cmd_simulate, cmd_sweep, cmd_synthesize, Outcome, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "sontag", version, about = "CLF-based feedback design, simulation and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Linearize, check stabilizability, solve the Riccati equation and build the design.
    Synthesize(CommonArgs),
    /// Simulate one closed loop and write its trajectory CSV.
    Simulate(CommonArgs),
    /// Compare designs i, iii and iv over a range of initial angles.
    Sweep(CommonArgs),
    /// Grid comparison of the LQR and Sontag-law decay regions.
    Roa(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Controller design: i (Sontag, LQR CLF), ii (Sontag, transformed CLF),
    /// iii (feedback linearization), iv (LQR).
    #[arg(long, value_parser = ["i", "ii", "iii", "iv"])]
    design: Option<String>,
    /// Initial angle in degrees, starting at rest.
    #[arg(long = "theta0-deg", allow_negative_numbers = true)]
    theta0_deg: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed recorded in the effective configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Hold the input constant over each integration step.
    #[arg(long)]
    zoh: bool,
}

impl CommonArgs {
    fn config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            design: self.design.clone(),
            theta0_deg: self.theta0_deg,
            out: self.out.clone(),
            seed: self.seed,
            zoh: self.zoh,
        });
        Ok(cfg)
    }
}

type Run = fn(&RunConfig, &mut dyn io::Write) -> anyhow::Result<()>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, run): (&CommonArgs, Run) = match &cli.command {
        Command::Synthesize(a) => (a, cmd_synthesize),
        Command::Simulate(a) => (a, cmd_simulate),
        Command::Sweep(a) => (a, cmd_sweep),
        Command::Roa(a) => (a, cmd_roa),
    };
    let result = args.config().and_then(|cfg| run(&cfg, &mut io::stdout().lock()));
    match result {
        Ok(()) => ExitCode::from(Outcome::Completed.code() as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(Outcome::of_error(&err).code() as u8)
        }
    }
}

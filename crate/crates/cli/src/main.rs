use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use oqbm_cli::scenarios::bundled;
use oqbm_cli::suite::{format_table, run_suite, SuiteOptions};
use oqbm_cli::{moments_run, phase_validate, run, CliError, Overrides, Scenario};

#[derive(Parser)]
#[command(
    name = "oqbm",
    version,
    about = "Open quantum Brownian motion simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the four-field Wigner system and write snapshots.
    Run(RunArgs),
    /// Evolve the truncated moment hierarchy and cross-check it against the PDE.
    Moments(RunArgs),
    /// Compare the full phase-space solver with the reduced equations over a γ schedule.
    PhaseValidate(RunArgs),
    /// Run every invariant check and print a pass/fail table.
    Suite,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, or the name of a bundled scenario (fig1a … fig5b).
    #[arg(long)]
    config: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    nmax: Option<usize>,
    /// Comma-separated list of γ_eff values.
    #[arg(long, value_delimiter = ',')]
    gamma_schedule: Option<Vec<f64>>,
    #[arg(long)]
    grid_n: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
}

impl RunArgs {
    fn scenario(&self) -> Result<Scenario, CliError> {
        let path = Path::new(&self.config);
        let s = if !path.exists() && !self.config.contains(['/', '.']) {
            bundled(&self.config)?
        } else {
            Scenario::load(path)?
        };
        let o = Overrides {
            grid_n: self.grid_n,
            dt: self.dt,
            nmax: self.nmax,
            gamma_schedule: self.gamma_schedule.clone(),
        };
        Ok(o.apply(&s))
    }
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run(a) => {
            let (m, _) = run(&a.scenario()?, &a.out)?;
            println!("wrote {} files to {}", m.files.len(), a.out.display());
        }
        Command::Moments(a) => {
            let o = moments_run(&a.scenario()?, &a.out)?;
            println!(
                "wrote {} files to {}",
                o.manifest.files.len(),
                a.out.display()
            );
        }
        Command::PhaseValidate(a) => {
            let (m, report) = phase_validate(&a.scenario()?, &a.out)?;
            for r in &report.rows {
                println!(
                    "gamma_eff={} t={} l1={:.4e}",
                    r.gamma_eff, r.t, r.l1_distance
                );
            }
            println!("wrote {} files to {}", m.files.len(), a.out.display());
        }
        Command::Suite => {
            let checks = run_suite(&SuiteOptions::default());
            print!("{}", format_table(&checks));
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(CliError::Suite {
                    failed,
                    total: checks.len(),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("OQBM_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

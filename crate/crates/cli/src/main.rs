use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cohesim::{CliError, Overrides, RunConfig, RunSelection};

#[derive(Parser)]
#[command(
    name = "cohesim",
    version,
    about = "Adaptive multiscale cohesive interface experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the root seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    servers: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample ground-truth errors and train the offline databases.
    BuildDb {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tolerate_failures: bool,
    },
    /// Forced baselines and adaptive runs for every configured tolerance.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tolerate_failures: bool,
        /// Skip the forced-model baselines.
        #[arg(long)]
        adaptive_only: bool,
    },
    /// Oracle suites and database integrity checks.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Forced full-model wall time against server count.
    BenchScaling {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        server_counts: Vec<usize>,
    },
}

fn load(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&c.config)?;
    Overrides {
        seed: c.seed,
        servers: c.servers,
        threads: c.threads,
        out: c.out.clone(),
    }
    .apply(&mut cfg)?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::BuildDb {
            common,
            tolerate_failures,
        } => {
            let cfg = load(&common)?;
            let report = cohesim::build_db(&cfg, tolerate_failures)?;
            for (g, db) in &report.databases {
                println!(
                    "gamma {g}: label counts (FM, TM) {:?}",
                    db.metadata.label_counts
                );
            }
            for (g, errs) in &report.test_errors {
                let worst = errs.iter().copied().fold(0.0, f64::max);
                println!("gamma {g}: held-out error max {:.2}%", 100.0 * worst);
            }
        }
        Command::Run {
            common,
            tolerate_failures,
            adaptive_only,
        } => {
            let cfg = load(&common)?;
            let sel = if adaptive_only {
                RunSelection::AdaptiveOnly
            } else {
                RunSelection::All
            };
            let report = cohesim::run(&cfg, sel, tolerate_failures)?;
            for row in &report.speedup {
                println!(
                    "gamma {}: TM fraction {:.3}, T_FM/T_AM {:.3}",
                    row.gamma, row.tm_fraction, row.ratio
                );
            }
            println!("results in {}", cfg.output().display());
        }
        Command::Verify { common } => {
            let cfg = load(&common)?;
            let suites = cohesim::verify(&cfg)?;
            for s in &suites {
                let status = if s.passed { "PASS" } else { "FAIL" };
                println!(
                    "{status} {:<26} max {:.3e} (tol {:.1e})  {}",
                    s.name, s.max_residual, s.tolerance, s.detail
                );
            }
            let failed: Vec<&str> = suites
                .iter()
                .filter(|s| !s.passed)
                .map(|s| s.name)
                .collect();
            if !failed.is_empty() {
                return Err(CliError::Verification(failed.join(", ")));
            }
        }
        Command::BenchScaling {
            common,
            server_counts,
        } => {
            let cfg = load(&common)?;
            for r in cohesim::bench_scaling(&cfg, &server_counts)? {
                println!(
                    "{} servers: {:.3} s, {} messages",
                    r.servers, r.wall_time_s, r.messages
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COHESIM_LOG", "info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Command-line experiment runner: TOML configs in, per-run CSVs and an
//! aggregate summary out.

pub mod config;
pub mod runner;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fedpac_core::federation::Engine;
use fedpac_core::preconditioners::Variant;

use crate::config::{Diagnostic, Overrides};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "FEDPAC_THREADS";

pub const EXIT_OK: i32 = 0;
/// Every run in the suite failed.
pub const EXIT_RUNS_FAILED: i32 = 1;
/// Unreadable or invalid config.
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fedpac", version, about = "Federated second-order optimization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every cell of an experiment config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Report every validation error without running.
    Validate {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
}

#[derive(Debug, Default, Args)]
pub struct OverrideArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub engine: Option<Engine>,
    #[arg(long)]
    pub optimizer: Option<Variant>,
    /// Correction mixing weight β.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Dirichlet concentration, or `iid`.
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: Option<AlphaArg>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaArg(pub Option<f64>);

fn parse_alpha(s: &str) -> Result<AlphaArg, String> {
    if s.eq_ignore_ascii_case("iid") {
        return Ok(AlphaArg(None));
    }
    s.parse::<f64>()
        .map(|a| AlphaArg(Some(a)))
        .map_err(|_| format!("expected a number or `iid`, got `{s}`"))
}

impl From<&OverrideArgs> for Overrides {
    fn from(a: &OverrideArgs) -> Self {
        Overrides {
            out: a.out.clone(),
            seeds: a.seeds.clone(),
            engine: a.engine,
            optimizer: a.optimizer,
            beta: a.beta,
            alpha: a.alpha.map(|a| a.0),
        }
    }
}

fn read_source(path: &PathBuf) -> Result<String, Vec<Diagnostic>> {
    std::fs::read_to_string(path).map_err(|e| {
        vec![Diagnostic {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        }]
    })
}

fn report(path: &PathBuf, diags: &[Diagnostic]) {
    for d in diags {
        eprintln!("{}: {d}", path.display());
    }
}

/// Diagnostics for a config file after overrides; empty means `run` accepts it.
pub fn validate_file(path: &PathBuf, overrides: &Overrides) -> Vec<Diagnostic> {
    read_source(path)
        .and_then(|s| config::load(&s, overrides))
        .err()
        .unwrap_or_default()
}

fn build_pool() -> Result<rayon::ThreadPool, String> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| format!("{THREADS_ENV} must be a positive integer, got `{v}`"))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| e.to_string())
}

/// Runs the parsed command and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    match cli.command {
        Command::Validate { config, overrides } => {
            let diags = validate_file(&config, &(&overrides).into());
            if diags.is_empty() {
                println!("{}: ok", config.display());
                EXIT_OK
            } else {
                report(&config, &diags);
                EXIT_INVALID
            }
        }
        Command::Run { config, overrides } => {
            let cfg = match read_source(&config).and_then(|s| config::load(&s, &(&overrides).into())) {
                Ok(c) => c,
                Err(d) => {
                    report(&config, &d);
                    return EXIT_INVALID;
                }
            };
            let pool = match build_pool() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("{e}");
                    return EXIT_INVALID;
                }
            };
            let (rows, outcomes) = match pool.install(|| runner::run_experiment(&cfg)) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("writing results to {}: {e}", cfg.out);
                    return EXIT_RUNS_FAILED;
                }
            };
            for o in &outcomes {
                if let Err(e) = &o.result {
                    eprintln!("{} failed: {e}", o.csv.display());
                }
            }
            for r in &rows {
                match (&r.final_acc, &r.final_train_loss) {
                    (Some(acc), Some(loss)) => println!(
                        "{:<28} loss {:.4} ± {:.4}  acc {:.4} ± {:.4}  ({}/{} runs)",
                        r.label,
                        loss.mean,
                        loss.std,
                        acc.mean,
                        acc.std,
                        r.runs_completed,
                        r.runs_completed + r.runs_failed
                    ),
                    _ => println!("{:<28} all {} runs failed", r.label, r.runs_failed),
                }
            }
            if outcomes.iter().any(|o| o.result.is_ok()) {
                EXIT_OK
            } else {
                EXIT_RUNS_FAILED
            }
        }
    }
}

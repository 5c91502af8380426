use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use sortsel::datagen::DgpSpec;
use sortsel_cli::commands::{self, SpecArgs};
use sortsel_cli::config::{CommonArgs, RunConfig};
use sortsel_cli::output::read_json;

/// Sorting and selection in couples' wage distributions.
#[derive(Debug, Parser)]
#[command(name = "sortsel", version, about)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic household file.
    Simulate {
        /// cps, cps-early, cps-late, recovery or identification.
        #[arg(long, default_value = "cps", conflicts_with = "dgp")]
        preset: String,
        /// JSON file with one DGP or a list of them (one per period).
        #[arg(long)]
        dgp: Option<PathBuf>,
        /// Households per period (presets only).
        #[arg(long, default_value_t = 20_000)]
        n: usize,
    },
    /// Fit the model on every period of the input.
    Estimate,
    /// Add bootstrap replicates to existing fits.
    Bootstrap {
        /// Fit files written by `estimate`, one per period.
        #[arg(long, num_args = 1.., required = true)]
        fits: Vec<PathBuf>,
    },
    /// Sorting table, quantiles and inequality ratio of a counterfactual.
    Counterfactual {
        /// Fit files written by `estimate`, one per period.
        #[arg(long, num_args = 1.., required = true)]
        fits: Vec<PathBuf>,
        /// Period of the participation model.
        #[arg(long)]
        selection: Option<String>,
        /// Period of the wage coefficients.
        #[arg(long)]
        structure: Option<String>,
        /// Period of the wage correlation between spouses (default: --structure).
        #[arg(long)]
        rho_ywyh: Option<String>,
        /// Period of the covariate distribution.
        #[arg(long)]
        composition: Option<String>,
    },
    /// Decompose changes between the base period and each other period.
    Decompose {
        /// Fit files written by `estimate`, one per period.
        #[arg(long, num_args = 1.., required = true)]
        fits: Vec<PathBuf>,
        /// Base period (default: the first fit).
        #[arg(long)]
        base: Option<String>,
        /// tau, diag, cell:R:C, ratio:U:L or q:w|h:T (repeatable).
        #[arg(long)]
        statistic: Vec<String>,
    },
}

fn load_dgp(path: &PathBuf) -> Result<Vec<DgpSpec>> {
    let value: serde_json::Value = read_json(path)?;
    let specs = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|s| vec![s])
    };
    specs.with_context(|| format!("{} is not a DGP specification", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::resolve(&cli.common)?;
    if let Some(w) = cfg.workers {
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global().context("starting worker pool")?;
    }
    log::debug!("configuration: {cfg:?}");
    match cli.command {
        Command::Simulate { preset, dgp, n } => {
            let specs = match dgp {
                Some(p) => load_dgp(&p)?,
                None => commands::preset(&preset, n, cfg.seed)?,
            };
            commands::run_simulate(&cfg, &specs)?;
        }
        Command::Estimate => {
            commands::run_estimate(&cfg)?;
        }
        Command::Bootstrap { fits } => {
            commands::run_bootstrap(&cfg, &fits)?;
        }
        Command::Counterfactual { fits, selection, structure, rho_ywyh, composition } => {
            let args = SpecArgs { selection, structure, rho_ywyh, composition };
            commands::run_counterfactual(&cfg, &fits, &args)?;
        }
        Command::Decompose { fits, base, statistic } => {
            commands::run_decompose(&cfg, &fits, base.as_deref(), &statistic)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

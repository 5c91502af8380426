//! Run configuration: a TOML file of defaults, overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sortsel::counterfactual::{Block, CovariateWeights};
use sortsel::selection::RhoName;

pub const SEED_ENV: &str = "SORTSEL_SEED";

/// Names of the input columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub d_w: String,
    pub d_h: String,
    pub y_w: String,
    pub y_h: String,
    /// Column of survey weights; unit weights when absent from the file.
    pub weight: String,
    pub period: String,
    /// Covariates entering both wage and participation equations.
    pub x: Vec<String>,
    /// Covariates entering participation only.
    pub z_only: Vec<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            d_w: "d_w".into(),
            d_h: "d_h".into(),
            y_w: "y_w".into(),
            y_h: "y_h".into(),
            weight: "weight".into(),
            period: "period".into(),
            x: Vec::new(),
            z_only: Vec::new(),
        }
    }
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub grid: Option<usize>,
    pub ghk_draws: Option<usize>,
    pub bootstrap: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub period_bins: Option<String>,
    pub zero: Option<Vec<String>>,
    pub fz: Option<String>,
    pub decomp_order: Option<String>,
    /// Draws of the counterfactual engine.
    pub cf_draws: Option<usize>,
    pub couples: Option<usize>,
    pub columns: Option<ColumnMap>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Flags shared by every subcommand; `None` falls back to the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonArgs {
    /// TOML file with defaults for any of these flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Household CSV.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Cutoffs per spouse (grid × grid cells).
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Simulation draws of the second-stage likelihood.
    #[arg(long, global = true)]
    pub ghk_draws: Option<usize>,
    /// Simulation draws per cutoff pair for model tables and counterfactuals.
    #[arg(long, global = true)]
    pub cf_draws: Option<usize>,
    /// Bootstrap replicates.
    #[arg(long, global = true)]
    pub bootstrap: Option<usize>,
    /// Seed; falls back to the config file, then SORTSEL_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Period grouping: a bin width such as `5`, or ranges such as `1976-1980,1981-1985`.
    #[arg(long, global = true)]
    pub period_bins: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Correlation to set to zero in counterfactuals (repeatable), e.g. `rho_ywyh`.
    #[arg(long, global = true)]
    pub zero: Vec<String>,
    /// Covariate distribution of counterfactuals: selected or population.
    #[arg(long, global = true)]
    pub fz: Option<String>,
    /// Comma-separated order of composition, selection, structure, rho_ywyh.
    #[arg(long, global = true)]
    pub decomp_order: Option<String>,
    /// Covariate columns of the wage equations (comma-separated).
    #[arg(long, global = true, value_delimiter = ',')]
    pub x: Vec<String>,
    /// Covariate columns of the participation equations only (comma-separated).
    #[arg(long, global = true, value_delimiter = ',')]
    pub z_only: Vec<String>,
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub grid: usize,
    pub ghk_draws: usize,
    pub bootstrap: usize,
    pub seed: u64,
    pub workers: Option<usize>,
    pub period_bins: Option<String>,
    pub zero: Vec<RhoName>,
    pub fz: CovariateWeights,
    pub decomp_order: Vec<Block>,
    pub cf_draws: usize,
    pub couples: usize,
    pub columns: ColumnMap,
}

pub fn parse_fz(s: &str) -> Result<CovariateWeights> {
    match s.trim().to_ascii_lowercase().as_str() {
        "selected" => Ok(CovariateWeights::Selected),
        "population" => Ok(CovariateWeights::Population),
        other => bail!("--fz must be 'selected' or 'population', got '{other}'"),
    }
}

pub fn parse_order(s: &str) -> Result<Vec<Block>> {
    let order = s
        .split(',')
        .map(|b| match b.trim().to_ascii_lowercase().as_str() {
            "composition" => Ok(Block::Composition),
            "selection" => Ok(Block::Selection),
            "structure" | "structural" => Ok(Block::Structure),
            "rho_ywyh" | "ywyh" => Ok(Block::RhoYwYh),
            other => bail!("unknown decomposition block '{other}'"),
        })
        .collect::<Result<Vec<_>>>()?;
    if order.len() != 4 || Block::DEFAULT_ORDER.iter().any(|b| !order.contains(b)) {
        bail!("--decomp-order must list composition, selection, structure and rho_ywyh once each");
    }
    Ok(order)
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let env_seed = match std::env::var(SEED_ENV) {
            Ok(v) => Some(v.trim().parse::<u64>().with_context(|| format!("{SEED_ENV}='{v}' is not a u64"))?),
            Err(_) => None,
        };
        let zero_names = if args.zero.is_empty() { file.zero.clone().unwrap_or_default() } else { args.zero.clone() };
        let zero = zero_names
            .iter()
            .map(|z| RhoName::parse(z).map_err(anyhow::Error::from))
            .collect::<Result<Vec<_>>>()?;
        let fz = match args.fz.as_deref().or(file.fz.as_deref()) {
            Some(s) => parse_fz(s)?,
            None => CovariateWeights::Selected,
        };
        let decomp_order = match args.decomp_order.as_deref().or(file.decomp_order.as_deref()) {
            Some(s) => parse_order(s)?,
            None => Block::DEFAULT_ORDER.to_vec(),
        };
        let mut columns = file.columns.unwrap_or_default();
        if !args.x.is_empty() {
            columns.x = args.x.clone();
        }
        if !args.z_only.is_empty() {
            columns.z_only = args.z_only.clone();
        }
        let cfg = Self {
            input: args.input.clone().or(file.input),
            out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("sortsel-out")),
            grid: args.grid.or(file.grid).unwrap_or(10),
            ghk_draws: args.ghk_draws.or(file.ghk_draws).unwrap_or(512),
            bootstrap: args.bootstrap.or(file.bootstrap).unwrap_or(0),
            seed: args.seed.or(file.seed).or(env_seed).unwrap_or(0),
            workers: args.workers.or(file.workers),
            period_bins: args.period_bins.clone().or(file.period_bins),
            zero,
            fz,
            decomp_order,
            cf_draws: args.cf_draws.or(file.cf_draws).unwrap_or(8192),
            couples: file.couples.unwrap_or(100_000),
            columns,
        };
        if cfg.grid == 0 || cfg.ghk_draws == 0 || cfg.cf_draws == 0 {
            bail!("grid, ghk_draws and cf_draws must be positive");
        }
        if cfg.workers == Some(0) {
            bail!("--workers must be at least 1");
        }
        let xs: std::collections::HashSet<&String> = cfg.columns.x.iter().collect();
        if let Some(c) = cfg.columns.z_only.iter().find(|c| xs.contains(c)) {
            bail!("column '{c}' listed both as X and as Z-only");
        }
        Ok(cfg)
    }

    pub fn input(&self) -> Result<&Path> {
        self.input.as_deref().context("no input file: pass --input or set `input` in the config file")
    }
}

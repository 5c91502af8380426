//! The simulate / estimate / bootstrap / counterfactual / decompose pipelines.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use serde::{Deserialize, Serialize};
use sortsel::counterfactual::{
    decompose, empirical_sorting_table, inequality_ratio_with, kde, model_sorting_measure, sample_inequality_ratio,
    CounterfactualSpec, CounterfactualTable, Decomposition, DecompositionConfig, Engine, EngineConfig,
    InequalityRatio, RatioConfig, Spouse, Statistic,
};
use sortsel::datagen::{cps_like, identification_dgp, recovery_dgp, simulate, DgpSpec, SimulatedData};
use sortsel::mvn::{mix_seed, GhkConfig};
use sortsel::selection::{
    attach_bootstrap, bootstrap_summary, fit_grid, grid_from_households, LocalParams, ModelGridFit, RhoName,
    SecondStageConfig,
};

use crate::config::{ColumnMap, FileConfig, RunConfig};
use crate::ingest::{ingest, write_households, write_text, Dataset, PeriodBins};
use crate::output::{
    ensure_dir, quantile_rows, read_json, slug, table_rows, write_csv, write_json, write_metadata, TableRow,
    FIT_SCHEMA,
};

/// A fitted period as written by `estimate` and read by the later stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub schema: String,
    pub period: String,
    pub config: serde_json::Value,
    pub x_names: Vec<String>,
    pub z_only_names: Vec<String>,
    pub households: usize,
    pub working_couples: usize,
    pub flagged_cells: usize,
    pub fit: ModelGridFit,
}

pub fn load_fits(paths: &[PathBuf]) -> Result<Vec<FitDocument>> {
    if paths.is_empty() {
        bail!("no fit files given (pass --fits)");
    }
    paths
        .iter()
        .map(|p| {
            if !p.exists() {
                bail!("fit file {} does not exist; run `sortsel estimate` first", p.display());
            }
            let doc: FitDocument = read_json(p)?;
            if doc.schema != FIT_SCHEMA {
                bail!("{}: unsupported schema '{}'", p.display(), doc.schema);
            }
            Ok(doc)
        })
        .collect()
}

/// Resolves a period given by label or 0-based index.
pub fn period_index(docs: &[FitDocument], key: &str) -> Result<usize> {
    if let Some(k) = docs.iter().position(|d| d.period == key) {
        return Ok(k);
    }
    match key.parse::<usize>() {
        Ok(k) if k < docs.len() => Ok(k),
        _ => {
            let known: Vec<&str> = docs.iter().map(|d| d.period.as_str()).collect();
            bail!("unknown period '{key}' (fitted: {})", known.join(", "))
        }
    }
}

fn engine_config(cfg: &RunConfig) -> EngineConfig {
    EngineConfig { draws: cfg.cf_draws, seed: cfg.seed, ..EngineConfig::default() }
}

// ---------------------------------------------------------------- simulate

pub fn preset(name: &str, n: usize, seed: u64) -> Result<Vec<DgpSpec>> {
    Ok(match name {
        "cps" => vec![cps_like(0, n, mix_seed(seed, 0)), cps_like(1, n, mix_seed(seed, 1))],
        "cps-early" => vec![cps_like(0, n, seed)],
        "cps-late" => vec![cps_like(1, n, seed)],
        "recovery" => vec![recovery_dgp(n, seed)],
        "identification" => vec![identification_dgp(n, seed)],
        other => bail!("unknown preset '{other}' (cps, cps-early, cps-late, recovery, identification)"),
    })
}

#[derive(Debug, Serialize)]
struct LatentRow<'a> {
    period: &'a str,
    v_dw: f64,
    v_dh: f64,
    v_yw: f64,
    v_yh: f64,
    y_w_star: f64,
    y_h_star: f64,
}

pub fn run_simulate(cfg: &RunConfig, specs: &[DgpSpec]) -> Result<Vec<PathBuf>> {
    ensure_dir(&cfg.out)?;
    if specs.is_empty() {
        bail!("nothing to simulate");
    }
    let sims: Vec<SimulatedData> = specs.iter().map(simulate).collect::<sortsel::Result<_>>()?;
    let (x, z) = (&sims[0].x_names, &sims[0].z_only_names);
    if sims.iter().any(|s| &s.x_names != x || &s.z_only_names != z) {
        bail!("simulated periods use different covariates");
    }
    let hh = cfg.out.join("households.csv");
    write_households(&hh, specs.iter().zip(&sims).map(|(s, d)| (s.period.as_str(), d.households.as_slice())), x, z)?;
    let latent: Vec<LatentRow> = specs
        .iter()
        .zip(&sims)
        .flat_map(|(s, d)| {
            d.latent.iter().map(move |l| LatentRow {
                period: &s.period,
                v_dw: l.v[0],
                v_dh: l.v[1],
                v_yw: l.v[2],
                v_yh: l.v[3],
                y_w_star: l.y_w_star,
                y_h_star: l.y_h_star,
            })
        })
        .collect();
    let lat = cfg.out.join("latent.csv");
    write_csv(&lat, &latent)?;
    let dgp = cfg.out.join("dgp.json");
    write_json(&dgp, &specs)?;
    let run = cfg.out.join("sortsel.toml");
    let file = FileConfig {
        input: Some(hh.canonicalize().unwrap_or_else(|_| hh.clone())),
        columns: Some(ColumnMap { x: x.clone(), z_only: z.clone(), ..ColumnMap::default() }),
        ..FileConfig::default()
    };
    write_text(&run, &toml::to_string(&file)?)?;
    for (s, d) in specs.iter().zip(&sims) {
        let working = d.households.iter().filter(|h| h.both_work()).count();
        eprintln!("period {}: {} households, {} working couples", s.period, d.households.len(), working);
    }
    let files = vec![hh, lat, dgp, run];
    write_metadata(&cfg.out, "simulate", &files)?;
    Ok(files)
}

// ---------------------------------------------------------------- estimate

#[derive(Debug, Serialize)]
struct CellRow<'a> {
    period: &'a str,
    i: usize,
    j: usize,
    cut_w: f64,
    cut_h: f64,
    parameter: String,
    value: f64,
    se: f64,
    value_failure_orientation: f64,
    flagged: bool,
}

fn cell_rows<'a>(period: &'a str, fit: &ModelGridFit, x_names: &[String]) -> Vec<CellRow<'a>> {
    let mut names = vec!["const".to_string()];
    names.extend(x_names.iter().cloned());
    let labels = LocalParams::labels(&names);
    let mut out = Vec::new();
    for c in &fit.cells {
        let (v, se, flipped) = (c.params.to_vec(), c.se.to_vec(), c.params.failure_orientation().to_vec());
        for (k, l) in labels.iter().enumerate() {
            out.push(CellRow {
                period,
                i: c.params.cell.0 + 1,
                j: c.params.cell.1 + 1,
                cut_w: c.cut_w,
                cut_h: c.cut_h,
                parameter: l.clone(),
                value: v[k],
                se: se[k],
                value_failure_orientation: flipped[k],
                flagged: c.flagged(),
            });
        }
    }
    out
}

#[derive(Debug, Serialize)]
struct KdeRow<'a> {
    period: &'a str,
    rho_ywyh: f64,
    density: f64,
}

#[derive(Debug, Serialize)]
struct BootRow<'a> {
    period: &'a str,
    i: usize,
    j: usize,
    parameter: String,
    sd: f64,
    lower: f64,
    upper: f64,
    replicates: usize,
}

fn convergence_summary(fit: &ModelGridFit) {
    let n = fit.cells.len();
    let conv = fit.cells.iter().filter(|c| c.converged).count();
    let bound = fit.cells.iter().filter(|c| c.boundary).count();
    eprintln!(
        "period {}: {n} cells, {conv} converged, {bound} at the correlation boundary, {} flagged",
        fit.period,
        fit.flagged_count()
    );
    for c in fit.cells.iter().filter(|c| c.flagged()) {
        eprintln!(
            "  cell ({}, {}): converged={} boundary={} {}",
            c.params.cell.0 + 1,
            c.params.cell.1 + 1,
            c.converged,
            c.boundary,
            c.note.as_deref().unwrap_or("")
        );
    }
}

fn write_bootstrap(dir: &Path, label: &str, fit: &ModelGridFit, x_names: &[String]) -> Result<PathBuf> {
    let mut names = vec!["const".to_string()];
    names.extend(x_names.iter().cloned());
    let labels = LocalParams::labels(&names);
    let mut rows = Vec::new();
    for s in bootstrap_summary(fit, 0.95) {
        let (sd, lo, hi) = (s.sd.to_vec(), s.lower.to_vec(), s.upper.to_vec());
        for (k, l) in labels.iter().enumerate() {
            rows.push(BootRow {
                period: label,
                i: s.cell.0 + 1,
                j: s.cell.1 + 1,
                parameter: l.clone(),
                sd: sd[k],
                lower: lo[k],
                upper: hi[k],
                replicates: s.used,
            });
        }
    }
    let path = dir.join(format!("bootstrap_{}.csv", slug(label)));
    write_csv(&path, &rows)?;
    Ok(path)
}

fn read_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let bins = PeriodBins::parse(cfg.period_bins.as_deref())?;
    let (data, report) = ingest(cfg.input()?, &cfg.columns, &bins)?;
    ensure_dir(&cfg.out)?;
    write_json(&cfg.out.join("ingest_report.json"), &report)?;
    for p in &report.periods {
        info!("period {}: {} households, {} working couples", p.label, p.households, p.working_couples);
    }
    Ok(data)
}

pub fn run_estimate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = read_dataset(cfg)?;
    let mut files = vec![cfg.out.join("ingest_report.json")];
    let second = SecondStageConfig { ghk: GhkConfig::new(cfg.ghk_draws, cfg.seed), ..SecondStageConfig::default() };
    let echo = serde_json::to_value(cfg)?;
    let mut tables: Vec<TableRow> = Vec::new();
    let mut fits = Vec::with_capacity(data.periods.len());
    let mut per_period = Vec::with_capacity(data.periods.len());
    for p in &data.periods {
        let label = p.label.as_str();
        let grid = grid_from_households(&p.households, cfg.grid).with_context(|| format!("period {label}"))?;
        let mut fit = fit_grid(&p.households, &grid, &second).with_context(|| format!("period {label}"))?;
        fit.period = label.to_string();
        if cfg.bootstrap > 0 {
            attach_bootstrap(&p.households, &mut fit, cfg.bootstrap, cfg.seed)?;
            files.push(write_bootstrap(&cfg.out, label, &fit, &data.x_names)?);
        }
        convergence_summary(&fit);
        let working = p.households.iter().filter(|h| h.both_work()).count();
        let doc = FitDocument {
            schema: FIT_SCHEMA.into(),
            period: label.to_string(),
            config: echo.clone(),
            x_names: data.x_names.clone(),
            z_only_names: data.z_only_names.clone(),
            households: p.households.len(),
            working_couples: working,
            flagged_cells: fit.flagged_count(),
            fit,
        };
        let s = slug(label);
        let path = cfg.out.join(format!("fit_{s}.json"));
        write_json(&path, &doc)?;
        files.push(path);
        let path = cfg.out.join(format!("cells_{s}.csv"));
        write_csv(&path, &cell_rows(label, &doc.fit, &data.x_names))?;
        files.push(path);
        let rho: Vec<f64> =
            doc.fit.cells.iter().filter(|c| !c.flagged()).map(|c| c.params.rho_ywyh).collect();
        if rho.len() >= 2 {
            let rows: Vec<KdeRow> =
                kde(&rho, 201)?.into_iter().map(|(x, d)| KdeRow { period: label, rho_ywyh: x, density: d }).collect();
            let path = cfg.out.join(format!("kde_rho_ywyh_{s}.csv"));
            write_csv(&path, &rows)?;
            files.push(path);
        }
        let (yw, yh): (Vec<f64>, Vec<f64>) = p.households.iter().filter_map(|h| Some((h.y_w?, h.y_h?))).unzip();
        let empirical = if yw.len() >= 100 {
            table_rows(label, "empirical", &empirical_sorting_table(&yw, &yh)?)
        } else {
            Vec::new()
        };
        per_period.push((label, empirical));
        fits.push(doc.fit);
    }
    // model tables see every period so that they match the counterfactual engine
    // run on the same set of fits
    for (k, (label, empirical)) in per_period.into_iter().enumerate() {
        tables.extend(empirical);
        let model = model_sorting_measure(&fits, &CounterfactualSpec::fitted(k), &engine_config(cfg))?;
        tables.extend(table_rows(label, "model", &model.table));
    }
    let path = cfg.out.join("tables.csv");
    write_csv(&path, &tables)?;
    files.push(path);
    write_metadata(&cfg.out, "estimate", &files)?;
    Ok(files)
}

// ---------------------------------------------------------------- bootstrap

pub fn run_bootstrap(cfg: &RunConfig, fit_paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if cfg.bootstrap < 2 {
        bail!("--bootstrap must be at least 2");
    }
    let docs = load_fits(fit_paths)?;
    let data = read_dataset(cfg)?;
    let mut files = Vec::new();
    for mut doc in docs {
        let p = data
            .period(&doc.period)
            .with_context(|| format!("period '{}' of the fit is not in the input", doc.period))?;
        attach_bootstrap(&p.households, &mut doc.fit, cfg.bootstrap, cfg.seed)?;
        eprintln!(
            "period {}: {} replicates, {} failed",
            doc.period,
            doc.fit.bootstrap.len(),
            doc.fit.bootstrap_failures
        );
        files.push(write_bootstrap(&cfg.out, &doc.period, &doc.fit, &doc.x_names)?);
        let path = cfg.out.join(format!("fit_{}.json", slug(&doc.period)));
        write_json(&path, &doc)?;
        files.push(path);
    }
    write_metadata(&cfg.out, "bootstrap", &files)?;
    Ok(files)
}

// ---------------------------------------------------------------- counterfactual

/// Period labels of a counterfactual, as requested on the command line.
#[derive(Debug, Clone, Default)]
pub struct SpecArgs {
    pub selection: Option<String>,
    pub structure: Option<String>,
    pub rho_ywyh: Option<String>,
    pub composition: Option<String>,
}

#[derive(Debug, Serialize)]
struct CounterfactualDocument {
    selection: String,
    structure: String,
    rho_ywyh: String,
    composition: String,
    zero: Vec<RhoName>,
    result: CounterfactualTable,
    inequality: InequalityRatio,
}

pub fn run_counterfactual(cfg: &RunConfig, fit_paths: &[PathBuf], args: &SpecArgs) -> Result<Vec<PathBuf>> {
    let docs = load_fits(fit_paths)?;
    let fits: Vec<ModelGridFit> = docs.iter().map(|d| d.fit.clone()).collect();
    let idx = |k: &Option<String>, default: usize| k.as_deref().map_or(Ok(default), |s| period_index(&docs, s));
    let structure = idx(&args.structure, 0)?;
    let spec = CounterfactualSpec {
        selection: idx(&args.selection, 0)?,
        structure,
        rho_ywyh: Some(idx(&args.rho_ywyh, structure)?),
        composition: idx(&args.composition, 0)?,
        zero: cfg.zero.clone(),
        weights: cfg.fz,
    };
    let engine = Engine::new(&fits, spec.clone(), engine_config(cfg))?;
    let result = engine.sorting_table()?;
    let ratio = RatioConfig { couples: cfg.couples, seed: cfg.seed, ..RatioConfig::default() };
    let inequality = inequality_ratio_with(&engine, &result.table, &ratio)?;
    let name = |k: usize| docs[k].period.clone();
    let label = format!(
        "sel={},str={},rho={},comp={}",
        name(spec.selection),
        name(spec.structure),
        name(spec.rho_period()),
        name(spec.composition)
    );
    eprintln!(
        "{label}: tau_b = {:.4}, d1/d1 = {:.3}, d10/d10 = {:.3}, D8/D2 = {:.4} (random sorting {:.4})",
        result.table.kendall_tau_grouped, result.table.cells[0][0], result.table.cells[9][9], inequality.ratio,
        inequality.random_sorting
    );
    ensure_dir(&cfg.out)?;
    let mut files = Vec::new();
    let path = cfg.out.join("counterfactual_table.csv");
    write_csv(&path, &table_rows(&label, "counterfactual", &result.table))?;
    files.push(path);
    let mut q = quantile_rows(&label, "wife", &result.deciles_w);
    q.extend(quantile_rows(&label, "husband", &result.deciles_h));
    let path = cfg.out.join("counterfactual_quantiles.csv");
    write_csv(&path, &q)?;
    files.push(path);
    let doc = CounterfactualDocument {
        selection: name(spec.selection),
        structure: name(spec.structure),
        rho_ywyh: name(spec.rho_period()),
        composition: name(spec.composition),
        zero: spec.zero.clone(),
        result,
        inequality,
    };
    let path = cfg.out.join("counterfactual.json");
    write_json(&path, &doc)?;
    files.push(path);
    write_metadata(&cfg.out, "counterfactual", &files)?;
    Ok(files)
}

// ---------------------------------------------------------------- decompose

pub const DEFAULT_STATISTICS: [&str; 4] = ["tau", "cell:1:1", "cell:10:10", "ratio:0.8:0.2"];

#[derive(Debug, Serialize)]
struct PathRow {
    statistic: String,
    base: String,
    target: String,
    step: usize,
    block: String,
    value: f64,
    component: f64,
}

#[derive(Debug, Serialize)]
struct DecompositionDocument {
    order: Vec<sortsel::counterfactual::Block>,
    decompositions: Vec<Decomposition>,
    /// Empirical D8/D2 ratios of the input, when an input was given.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    empirical_ratios: Vec<(String, InequalityRatio)>,
}

fn block_name(b: sortsel::counterfactual::Block) -> &'static str {
    use sortsel::counterfactual::Block::*;
    match b {
        Composition => "composition",
        Selection => "selection",
        Structure => "structure",
        RhoYwYh => "rho_ywyh",
    }
}

pub fn run_decompose(
    cfg: &RunConfig,
    fit_paths: &[PathBuf],
    base: Option<&str>,
    statistics: &[String],
) -> Result<Vec<PathBuf>> {
    let docs = load_fits(fit_paths)?;
    if docs.len() < 2 {
        bail!("a decomposition needs fits of at least two periods");
    }
    let fits: Vec<ModelGridFit> = docs.iter().map(|d| d.fit.clone()).collect();
    let base = base.map_or(Ok(0), |b| period_index(&docs, b))?;
    let names: Vec<String> = if statistics.is_empty() {
        DEFAULT_STATISTICS.iter().map(ToString::to_string).collect()
    } else {
        statistics.to_vec()
    };
    let stats = names.iter().map(|s| Statistic::parse(s)).collect::<sortsel::Result<Vec<_>>>()?;
    let dcfg = DecompositionConfig {
        engine: engine_config(cfg),
        order: cfg.decomp_order.clone(),
        ratio: RatioConfig { couples: cfg.couples, seed: cfg.seed, ..RatioConfig::default() },
        zero: cfg.zero.clone(),
        weights: cfg.fz,
    };
    let mut all = Vec::new();
    let mut rows = Vec::new();
    for target in (0..docs.len()).filter(|&t| t != base) {
        let ds = decompose(&fits, base, target, &stats, &dcfg)?;
        for (name, d) in names.iter().zip(&ds) {
            eprintln!(
                "{name}: {} -> {}: total {:+.4} = {}",
                d.base,
                d.target,
                d.total,
                d.components.iter().map(|(b, v)| format!("{} {v:+.4}", block_name(*b))).collect::<Vec<_>>().join(", ")
            );
            for (step, &v) in d.path.iter().enumerate() {
                rows.push(PathRow {
                    statistic: name.clone(),
                    base: d.base.clone(),
                    target: d.target.clone(),
                    step,
                    block: if step == 0 { "base".into() } else { block_name(d.components[step - 1].0).into() },
                    value: v,
                    component: if step == 0 { 0.0 } else { d.components[step - 1].1 },
                });
            }
        }
        all.extend(ds);
    }
    let mut empirical_ratios = Vec::new();
    if cfg.input.is_some() {
        let data = read_dataset(cfg)?;
        let rc = RatioConfig { seed: cfg.seed, ..RatioConfig::default() };
        for p in &data.periods {
            let (yw, yh): (Vec<f64>, Vec<f64>) =
                p.households.iter().filter_map(|h| Some((h.y_w?, h.y_h?))).unzip();
            if yw.len() >= 100 {
                empirical_ratios.push((p.label.clone(), sample_inequality_ratio(&yw, &yh, &rc)?));
            }
        }
    }
    ensure_dir(&cfg.out)?;
    let mut files = Vec::new();
    let path = cfg.out.join("decomposition.csv");
    write_csv(&path, &rows)?;
    files.push(path);
    let path = cfg.out.join("decomposition.json");
    write_json(&path, &DecompositionDocument { order: cfg.decomp_order.clone(), decompositions: all, empirical_ratios })?;
    files.push(path);
    write_metadata(&cfg.out, "decompose", &files)?;
    Ok(files)
}

/// Marginal quantiles of one spouse under the fitted distribution of a period.
pub fn fitted_quantiles(fit: &ModelGridFit, spouse: Spouse, cfg: &RunConfig) -> Result<Vec<f64>> {
    let fits = std::slice::from_ref(fit);
    let eng = Engine::new(fits, CounterfactualSpec::fitted(0), engine_config(cfg))?;
    Ok(eng.deciles(spouse).into_iter().map(|q| q.value).collect())
}

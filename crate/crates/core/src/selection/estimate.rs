//! Two-step estimation: bivariate probit for participation, then a simulated
//! four-cell likelihood per pair of wage cutoffs.

use std::collections::HashMap;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::household::{validate_households, Household};
use super::params::{assemble_sigma, LocalParams, RhoName};
use crate::distreg::{bdr_cell_fit, biprobit_fit, BiprobitFit, Design, ThresholdGrid};
use crate::mvn::dual::{Dual, Real};
use crate::mvn::{
    bvn_cdf_unchecked, cholesky_generic, mix_seed, std_normal_cdf, uniform_points, GhkConfig,
    MAX_DIM,
};
use crate::optim::{bfgs, hessian_from_gradient, OptimConfig};
use crate::{Error, Result};

const BOUNDARY_RHO: f64 = 0.995;
const PREFIX_CACHE_LIMIT: usize = 1 << 21;

/// Settings of the second-stage simulated likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondStageConfig {
    pub ghk: GhkConfig,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub f_tol: f64,
    /// Second-stage correlations held at a given value instead of estimated.
    #[serde(default)]
    pub fixed: Vec<(RhoName, f64)>,
    #[serde(default = "yes")]
    pub compute_se: bool,
}

fn yes() -> bool {
    true
}

impl Default for SecondStageConfig {
    fn default() -> Self {
        Self {
            ghk: GhkConfig::new(512, 0),
            max_iter: 200,
            grad_tol: 1e-4,
            f_tol: 1e-8,
            fixed: Vec::new(),
            compute_se: true,
        }
    }
}

impl SecondStageConfig {
    /// Fixes every selection–wage correlation at zero.
    pub fn without_selection(mut self) -> Self {
        self.fixed = [RhoName::DwYw, RhoName::DhYh, RhoName::DwYh, RhoName::DhYw]
            .into_iter()
            .map(|r| (r, 0.0))
            .collect();
        self
    }

    fn fixed_value(&self, r: RhoName) -> Option<f64> {
        self.fixed.iter().find(|(n, _)| *n == r).map(|&(_, v)| v)
    }
}

pub fn first_stage(data: &[Household]) -> Result<BiprobitFit> {
    validate_households(data)?;
    let rows: Vec<Vec<f64>> = data.iter().map(|h| h.z_row.clone()).collect();
    let design = Design::from_rows(&rows, None)?;
    let d_w: Vec<bool> = data.iter().map(|h| h.d_w).collect();
    let d_h: Vec<bool> = data.iter().map(|h| h.d_h).collect();
    let w: Vec<f64> = data.iter().map(|h| h.weight).collect();
    biprobit_fit(&d_w, &d_h, &design, Some(&w))
}

/// Draw-level quantities of the two participation dimensions, which do not
/// depend on the second-stage parameters.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Prefix {
    pub(crate) e0: f64,
    pub(crate) e1: f64,
    pub(crate) w01: f64,
    pub(crate) u2: f64,
}

/// Seed of the draws used for a covariate row; shared by all cells and quadrants.
pub(crate) fn row_seed(seed: u64, z: &[f64]) -> u64 {
    z.iter().fold(mix_seed(seed, z.len() as u64), |s, v| mix_seed(s, v.to_bits()))
}

pub(crate) fn prefix(mu_dw: f64, mu_dh: f64, rho_dwdh: f64, ghk: &GhkConfig, seed: u64) -> Vec<Prefix> {
    let l11 = (1.0 - rho_dwdh * rho_dwdh).sqrt();
    let p0 = std_normal_cdf(mu_dw);
    uniform_points(MAX_DIM - 1, &ghk.with_seed(seed))
        .into_iter()
        .map(|u| {
            let e0 = p0.truncated_draw(u[0]);
            let p1 = std_normal_cdf((mu_dh - rho_dwdh * e0) / l11);
            let e1 = p1.truncated_draw(u[1]);
            Prefix { e0, e1, w01: p0 * p1, u2: u[2] }
        })
        .collect()
}

/// Simulated P(D_w = 1, D_h = 1, ±V_Yw ≤ ±μ_Yw, ±V_Yh ≤ ±μ_Yh) for one quadrant.
#[inline]
fn quadrant_prob<T: Real>(pre: &[Prefix], mu_yw: T, mu_yh: T, l: &[[T; MAX_DIM]; MAX_DIM], sw: f64, sh: f64) -> T {
    let mut acc = T::cst(0.0);
    for p in pre {
        let m2 = l[2][0] * p.e0 + l[2][1] * p.e1;
        let p2 = ((mu_yw - m2) * sw / l[2][2]).ncdf();
        let e2 = p2.truncated_draw(p.u2) * sw;
        let m3 = l[3][0] * p.e0 + l[3][1] * p.e1 + l[3][2] * e2;
        let p3 = ((mu_yh - m3) * sh / l[3][3]).ncdf();
        acc = acc + p2 * p3 * p.w01;
    }
    acc * (1.0 / pre.len() as f64)
}

const SIGNS: [(f64, f64); 4] = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];

fn quadrant(y_w: f64, y_h: f64, cut_w: f64, cut_h: f64) -> usize {
    2 * usize::from(y_w > cut_w) + usize::from(y_h > cut_h)
}

/// Selection-conditional probabilities of the four wage quadrants
/// {Y_w ≤ / > y_w} × {Y_h ≤ / > y_h} at one covariate row, in the order
/// (≤,≤), (≤,>), (>,≤), (>,>). They sum to the simulated Φ₂ / Φ₂ ≈ 1.
pub fn quadrant_probabilities(
    params: &LocalParams,
    gamma_w: &[f64],
    gamma_h: &[f64],
    x_row: &[f64],
    z_row: &[f64],
    ghk: &GhkConfig,
) -> Result<[f64; 4]> {
    let sigma = assemble_sigma(params)?.corr;
    let chol = sigma.cholesky()?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (mu_dw, mu_dh) = (dot(z_row, gamma_w), dot(z_row, gamma_h));
    let pre = prefix(mu_dw, mu_dh, sigma.get(0, 1), ghk, row_seed(ghk.seed, z_row));
    let den = bvn_cdf_unchecked(mu_dw, mu_dh, sigma.get(0, 1)).max(1e-300);
    let (mw, mh) = (dot(x_row, &params.beta_w), dot(x_row, &params.beta_h));
    Ok(SIGNS.map(|(sw, sh)| quadrant_prob(&pre, mw, mh, &chol, sw, sh) / den))
}

/// Working couples grouped by covariate row, with the participation prefix of
/// the GHK draws cached when it fits in memory.
pub(crate) struct WorkingSample {
    kx: usize,
    rows: Vec<(Vec<f64>, Vec<f64>)>,
    members: Vec<Vec<(f64, f64, f64)>>,
    mu_d: Vec<(f64, f64)>,
    log_den: Vec<f64>,
    seeds: Vec<u64>,
    rho_dwdh: f64,
    ghk: GhkConfig,
    cache: Option<Vec<Vec<Prefix>>>,
}

impl WorkingSample {
    pub(crate) fn new(data: &[Household], first: &BiprobitFit, ghk: &GhkConfig) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut rows = Vec::new();
        let mut members: Vec<Vec<(f64, f64, f64)>> = Vec::new();
        for h in data.iter().filter(|h| h.both_work() && h.weight > 0.0) {
            let key: Vec<u64> = h.z_row.iter().map(|v| v.to_bits()).collect();
            let g = *index.entry(key).or_insert_with(|| {
                rows.push((h.x_row.clone(), h.z_row.clone()));
                members.push(Vec::new());
                rows.len() - 1
            });
            members[g].push((h.y_w.unwrap_or(f64::NAN), h.y_h.unwrap_or(f64::NAN), h.weight));
        }
        let mu_d: Vec<(f64, f64)> = rows.iter().map(|(_, z)| (first.index_w(z), first.index_h(z))).collect();
        let log_den = mu_d
            .iter()
            .map(|&(a, b)| bvn_cdf_unchecked(a, b, first.rho).max(1e-300).ln())
            .collect();
        let seeds: Vec<u64> = rows.iter().map(|(_, z)| row_seed(ghk.seed, z)).collect();
        let mut s = Self {
            kx: data.first().map_or(0, |h| h.x_row.len()),
            rows,
            members,
            mu_d,
            log_den,
            seeds,
            rho_dwdh: first.rho,
            ghk: *ghk,
            cache: None,
        };
        if s.rows.len() * ghk.draws <= PREFIX_CACHE_LIMIT {
            s.cache = Some((0..s.rows.len()).map(|g| s.compute_prefix(g)).collect());
        }
        s
    }

    fn compute_prefix(&self, g: usize) -> Vec<Prefix> {
        let (a, b) = self.mu_d[g];
        prefix(a, b, self.rho_dwdh, &self.ghk, self.seeds[g])
    }

    pub(crate) fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Quadrant weights per covariate row for a pair of cutoffs.
    fn cell_weights(&self, cut_w: f64, cut_h: f64) -> Vec<[f64; 4]> {
        self.members
            .iter()
            .map(|m| {
                let mut w = [0.0; 4];
                for &(a, b, wt) in m {
                    w[quadrant(a, b, cut_w, cut_h)] += wt;
                }
                w
            })
            .collect()
    }
}

const NSLOT: usize = 7;

/// Mean log-likelihood of the working couples and its gradient with respect to
/// (β_w, β_h, the five second-stage correlations).
fn cell_loglik(
    ws: &WorkingSample,
    weights: &[[f64; 4]],
    beta_w: &[f64],
    beta_h: &[f64],
    rhos: &[f64; 5],
) -> Option<(f64, Vec<f64>, f64)> {
    let mut sigma = [[Dual::<NSLOT>::cst(0.0); MAX_DIM]; MAX_DIM];
    for (i, row) in sigma.iter_mut().enumerate() {
        row[i] = Dual::cst(1.0);
    }
    sigma[0][1] = Dual::cst(ws.rho_dwdh);
    sigma[1][0] = sigma[0][1];
    for (k, r) in RhoName::SECOND_STAGE.iter().enumerate() {
        let (i, j) = r.position();
        sigma[i][j] = Dual::var(rhos[k], 2 + k);
        sigma[j][i] = sigma[i][j];
    }
    let l = cholesky_generic(&sigma, MAX_DIM)?;
    if (0..MAX_DIM).any(|k| l[k][k].v < 1e-7) {
        return None;
    }
    let kx = ws.kx;
    let mut ll = 0.0;
    let mut wsum = 0.0;
    let mut grad = vec![0.0; 2 * kx + 5];
    for (g, wq) in weights.iter().enumerate() {
        if wq.iter().all(|&w| w == 0.0) {
            continue;
        }
        let owned;
        let pre = match &ws.cache {
            Some(c) => &c[g],
            None => {
                owned = ws.compute_prefix(g);
                &owned
            }
        };
        let x = &ws.rows[g].0;
        let dot = |b: &[f64]| x.iter().zip(b).map(|(a, c)| a * c).sum::<f64>();
        let mw = Dual::<NSLOT>::var(dot(beta_w), 0);
        let mh = Dual::<NSLOT>::var(dot(beta_h), 1);
        for (q, &w) in wq.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (sw, sh) = SIGNS[q];
            let p = quadrant_prob(pre, mw, mh, &l, sw, sh);
            let pv = p.v.max(1e-300);
            ll += w * (pv.ln() - ws.log_den[g]);
            wsum += w;
            for j in 0..kx {
                grad[j] += w * p.d[0] / pv * x[j];
                grad[kx + j] += w * p.d[1] / pv * x[j];
            }
            for k in 0..5 {
                grad[2 * kx + k] += w * p.d[2 + k] / pv;
            }
        }
    }
    Some((ll, grad, wsum))
}

/// Estimated block at one cell, with standard errors laid out as a [`LocalParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFit {
    pub params: LocalParams,
    pub se: LocalParams,
    pub cut_w: f64,
    pub cut_h: f64,
    /// Weighted log-likelihood of the working couples conditional on selection.
    #[serde(with = "crate::serde_float")]
    pub loglik: f64,
    pub converged: bool,
    pub boundary: bool,
    pub iterations: usize,
    #[serde(with = "crate::serde_float")]
    pub grad_norm: f64,
    /// Weighted counts of the four wage quadrants.
    #[serde(with = "crate::serde_float::arr4")]
    pub quadrant_weights: [f64; 4],
    pub note: Option<String>,
}

impl CellFit {
    /// Cells excluded from downstream averages.
    pub fn flagged(&self) -> bool {
        !self.converged || self.boundary
    }
}

fn nan_params(kx: usize, cell: (usize, usize)) -> LocalParams {
    let mut p = LocalParams::independent(vec![f64::NAN; kx], vec![f64::NAN; kx], cell);
    for r in RhoName::ALL {
        p.set_rho(r, f64::NAN);
    }
    p
}

pub fn second_stage_cell(
    data: &[Household],
    first: &BiprobitFit,
    cut_w: f64,
    cut_h: f64,
    cfg: &SecondStageConfig,
) -> Result<CellFit> {
    validate_households(data)?;
    let ws = WorkingSample::new(data, first, &cfg.ghk);
    fit_cell(&ws, first, cut_w, cut_h, (0, 0), cfg)
}

pub(crate) fn fit_cell(
    ws: &WorkingSample,
    first: &BiprobitFit,
    cut_w: f64,
    cut_h: f64,
    cell: (usize, usize),
    cfg: &SecondStageConfig,
) -> Result<CellFit> {
    if first.rho.abs() >= 1.0 {
        return Err(Error::Estimation("first-stage correlation on the boundary".into()));
    }
    let kx = ws.kx;
    let weights = ws.cell_weights(cut_w, cut_h);
    let mut qw = [0.0; 4];
    for w in &weights {
        for q in 0..4 {
            qw[q] += w[q];
        }
    }
    let mut se = nan_params(kx, cell);
    se.rho_dwdh = first.rho_se;
    if let Some(q) = qw.iter().position(|&w| w == 0.0) {
        warn!("cell {cell:?}: wage quadrant {q} is empty; flagged");
        let mut params = nan_params(kx, cell);
        params.rho_dwdh = first.rho;
        return Ok(CellFit {
            params,
            se,
            cut_w,
            cut_h,
            loglik: f64::NAN,
            converged: false,
            boundary: false,
            iterations: 0,
            grad_norm: f64::NAN,
            quadrant_weights: qw,
            note: Some(format!("empty wage quadrant {q}")),
        });
    }

    // warm start from bivariate distribution regression on the selected sample
    let (yw, yh, rows, wts): (Vec<f64>, Vec<f64>, Vec<Vec<f64>>, Vec<f64>) = {
        let mut out = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (g, m) in ws.members.iter().enumerate() {
            for &(a, b, w) in m {
                out.0.push(a);
                out.1.push(b);
                out.2.push(ws.rows[g].0.clone());
                out.3.push(w);
            }
        }
        out
    };
    let design = Design::from_rows(&rows, None)?;
    let start = bdr_cell_fit(&yw, &yh, &design, cut_w, cut_h, Some(&wts))?;

    let free: Vec<usize> = (0..5).filter(|&k| cfg.fixed_value(RhoName::SECOND_STAGE[k]).is_none()).collect();
    let unpack = |p: &[f64]| -> [f64; 5] {
        let mut r = [0.0; 5];
        for (k, name) in RhoName::SECOND_STAGE.iter().enumerate() {
            r[k] = cfg.fixed_value(*name).unwrap_or(0.0);
        }
        for (m, &k) in free.iter().enumerate() {
            r[k] = p[2 * kx + m].tanh();
        }
        r
    };
    let mut x0: Vec<f64> = start.beta_w.coefficients.iter().chain(&start.beta_h.coefficients).copied().collect();
    for &k in &free {
        let v = if RhoName::SECOND_STAGE[k] == RhoName::YwYh { start.rho.rho.clamp(-0.95, 0.95) } else { 0.0 };
        x0.push(v.atanh());
    }
    let wtot: f64 = qw.iter().sum();
    let objective = |p: &[f64]| -> Option<(f64, Vec<f64>)> {
        let rhos = unpack(p);
        let (ll, g, _) = cell_loglik(ws, &weights, &p[..kx], &p[kx..2 * kx], &rhos)?;
        let mut grad: Vec<f64> = g[..2 * kx].iter().map(|v| -v / wtot).collect();
        for &k in &free {
            grad.push(-g[2 * kx + k] * (1.0 - rhos[k] * rhos[k]) / wtot);
        }
        Some((-ll / wtot, grad))
    };
    let ocfg = OptimConfig { max_iter: cfg.max_iter, grad_tol: cfg.grad_tol, f_tol: cfg.f_tol };
    let res = bfgs(objective, &x0, &ocfg);
    let rhos = unpack(&res.x);
    let mut params = LocalParams::independent(res.x[..kx].to_vec(), res.x[kx..2 * kx].to_vec(), cell);
    params.rho_dwdh = first.rho;
    for (k, name) in RhoName::SECOND_STAGE.iter().enumerate() {
        params.set_rho(*name, rhos[k]);
    }
    let boundary = free.iter().any(|&k| rhos[k].abs() > BOUNDARY_RHO);
    let mut note = None;
    if cfg.compute_se && res.f.is_finite() {
        match hessian_from_gradient(|p| objective(p).map(|(_, g)| g), &res.x, 1e-4)
            .and_then(|h| (h * wtot).try_inverse())
        {
            Some(cov) => {
                let s = |j: usize| cov[(j, j)].max(0.0).sqrt();
                se.beta_w = (0..kx).map(s).collect();
                se.beta_h = (kx..2 * kx).map(s).collect();
                for (k, name) in RhoName::SECOND_STAGE.iter().enumerate() {
                    let v = match free.iter().position(|&f| f == k) {
                        Some(m) => (1.0 - rhos[k] * rhos[k]) * s(2 * kx + m),
                        None => 0.0,
                    };
                    se.set_rho(*name, v);
                }
            }
            None => note = Some("singular Hessian; standard errors unavailable".to_string()),
        }
    }
    if !res.converged {
        debug!("cell {cell:?} did not converge (|g| = {:.2e})", res.grad_norm());
    }
    Ok(CellFit {
        params,
        se,
        cut_w,
        cut_h,
        loglik: -res.f * wtot,
        converged: res.converged,
        boundary,
        iterations: res.iterations,
        grad_norm: res.grad_norm(),
        quadrant_weights: qw,
        note,
    })
}

/// Log-likelihood of the working couples at given local parameters, as
/// maximized by [`second_stage_cell`].
pub fn cell_loglik_at(
    data: &[Household],
    first: &BiprobitFit,
    params: &LocalParams,
    cut_w: f64,
    cut_h: f64,
    ghk: &GhkConfig,
) -> Result<f64> {
    let ws = WorkingSample::new(data, first, ghk);
    let weights = ws.cell_weights(cut_w, cut_h);
    let r = RhoName::SECOND_STAGE.map(|n| params.rho(n));
    cell_loglik(&ws, &weights, &params.beta_w, &params.beta_h, &r)
        .map(|(ll, _, _)| ll)
        .ok_or_else(|| Error::Matrix("local correlation matrix is not positive definite".into()))
}

/// Covariate distribution of the estimation sample: distinct participation rows
/// with their total weight among all couples and among working couples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Composition {
    pub kx: usize,
    pub rows: Vec<Vec<f64>>,
    pub weight_all: Vec<f64>,
    pub weight_working: Vec<f64>,
}

impl Composition {
    pub fn from_households(data: &[Household]) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut c = Self { kx: data.first().map_or(0, |h| h.x_row.len()), ..Self::default() };
        for h in data {
            let key: Vec<u64> = h.z_row.iter().map(|v| v.to_bits()).collect();
            let g = *index.entry(key).or_insert_with(|| {
                c.rows.push(h.z_row.clone());
                c.weight_all.push(0.0);
                c.weight_working.push(0.0);
                c.rows.len() - 1
            });
            c.weight_all[g] += h.weight;
            if h.both_work() {
                c.weight_working[g] += h.weight;
            }
        }
        c
    }
}

/// First stage plus local parameters on a grid of cutoff pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGridFit {
    pub period: String,
    pub first_stage: BiprobitFit,
    pub thresholds: ThresholdGrid,
    /// Row-major: cell (i, j) at `i * size + j`, i indexing the wife's cutoff.
    pub cells: Vec<CellFit>,
    pub composition: Composition,
    pub config: SecondStageConfig,
    #[serde(default)]
    pub bootstrap: Vec<Replicate>,
    #[serde(default)]
    pub bootstrap_failures: usize,
}

/// One bootstrap replicate of the two-step fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub first_stage: BiprobitFit,
    pub cells: Vec<LocalParams>,
    pub flagged: Vec<bool>,
}

impl ModelGridFit {
    pub fn size(&self) -> usize {
        self.thresholds.size()
    }

    pub fn cell(&self, i: usize, j: usize) -> &CellFit {
        &self.cells[i * self.size() + j]
    }

    pub fn flagged_count(&self) -> usize {
        self.cells.iter().filter(|c| c.flagged()).count()
    }

    pub fn kx(&self) -> usize {
        self.composition.kx
    }
}

pub fn fit_grid(data: &[Household], grid: &ThresholdGrid, cfg: &SecondStageConfig) -> Result<ModelGridFit> {
    validate_households(data)?;
    grid.validate()?;
    let first = first_stage(data)?;
    let ws = WorkingSample::new(data, &first, &cfg.ghk);
    if ws.n_rows() == 0 {
        return Err(Error::Estimation("no working couples".into()));
    }
    let g = grid.size();
    let cells = (0..g * g)
        .into_par_iter()
        .map(|c| {
            let (i, j) = (c / g, c % g);
            fit_cell(&ws, &first, grid.cut_w[i], grid.cut_h[j], (i, j), cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let flagged = cells.iter().filter(|c| c.flagged()).count();
    if flagged > 0 {
        warn!("{flagged} of {} cells flagged", cells.len());
    }
    Ok(ModelGridFit {
        period: String::new(),
        first_stage: first,
        thresholds: grid.clone(),
        cells,
        composition: Composition::from_households(data),
        config: cfg.clone(),
        bootstrap: Vec::new(),
        bootstrap_failures: 0,
    })
}

/// Cutoff grid from the wages of the working couples.
pub fn grid_from_households(data: &[Household], size: usize) -> Result<ThresholdGrid> {
    let (yw, yh): (Vec<f64>, Vec<f64>) = data
        .iter()
        .filter_map(|h| Some((h.y_w?, h.y_h?)))
        .unzip();
    ThresholdGrid::from_sample(&yw, &yh, size)
}

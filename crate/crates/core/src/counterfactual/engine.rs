//! Counterfactual distributions: selection, structure, wage correlation and
//! covariate composition taken from possibly different fitted periods.

use std::sync::atomic::{AtomicUsize, Ordering};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sorting::{SortingTable, TableSource, DECILES};
use crate::mvn::dual::Real;
use crate::mvn::{
    bvn_cdf_unchecked, mix_seed, orthant_with_config, project_to_pd, GhkConfig, MAX_DIM, PD_EPS,
};
use crate::selection::{assemble_sigma, prefix, row_seed, LocalParams, ModelGridFit, Prefix, RhoName};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spouse {
    Wife,
    Husband,
}

/// Which covariate distribution the conditional distributions are averaged over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateWeights {
    /// Covariates of couples in which both spouses work.
    #[default]
    Selected,
    /// Covariates of all couples.
    Population,
}

/// Indices into the slice of fitted periods.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterfactualSpec {
    /// Participation indices and participation–wage correlations.
    pub selection: usize,
    /// Wage coefficients.
    pub structure: usize,
    /// Wage correlation between spouses; follows `structure` when absent.
    #[serde(default)]
    pub rho_ywyh: Option<usize>,
    /// Covariate distribution.
    pub composition: usize,
    /// Correlations forced to zero.
    #[serde(default)]
    pub zero: Vec<RhoName>,
    #[serde(default)]
    pub weights: CovariateWeights,
}

impl CounterfactualSpec {
    /// Everything from one period: the fitted distribution.
    pub fn fitted(period: usize) -> Self {
        Self {
            selection: period,
            structure: period,
            rho_ywyh: None,
            composition: period,
            zero: Vec::new(),
            weights: CovariateWeights::Selected,
        }
    }

    pub fn rho_period(&self) -> usize {
        self.rho_ywyh.unwrap_or(self.structure)
    }

    pub fn with_zero(mut self, r: RhoName) -> Self {
        if !self.zero.contains(&r) {
            self.zero.push(r);
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub draws: usize,
    pub seed: u64,
    /// Width (in wage units) at which quantile bisection stops.
    pub quant_tol: f64,
    /// Points of the log-spaced wage grid on which marginal CDFs are tabulated.
    pub grid_points: usize,
    /// Covariate rows beyond this are thinned by systematic weighted sampling.
    pub max_z_rows: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { draws: 8192, seed: 0, quant_tol: 0.01, grid_points: 161, max_z_rows: 256 }
    }
}

/// Cell parameters of one period as functions of log wages.
#[derive(Debug, Clone)]
struct Curves {
    lw: Vec<f64>,
    lh: Vec<f64>,
    beta_w: Vec<Vec<f64>>,
    beta_h: Vec<Vec<f64>>,
    dwyw: Vec<f64>,
    dhyw: Vec<f64>,
    dwyh: Vec<f64>,
    dhyh: Vec<f64>,
    ywyh: Vec<Vec<f64>>,
}

fn fill_gaps(v: &mut [f64]) -> bool {
    let valid: Vec<usize> = (0..v.len()).filter(|&i| v[i].is_finite()).collect();
    if valid.is_empty() {
        return false;
    }
    for i in 0..v.len() {
        if !v[i].is_finite() {
            let k = *valid.iter().min_by_key(|&&k| k.abs_diff(i)).unwrap();
            v[i] = v[k];
        }
    }
    true
}

impl Curves {
    fn new(fit: &ModelGridFit) -> Result<Self> {
        let g = fit.size();
        let kx = fit.kx();
        let ok = |c: &crate::selection::CellFit| !c.flagged();
        // marginal pieces: average over the other spouse's cutoff
        let avg = |f: &dyn Fn(usize, usize) -> f64, by_row: bool| -> Vec<f64> {
            (0..g)
                .map(|a| {
                    let vals: Vec<f64> = (0..g)
                        .filter_map(|b| {
                            let (i, j) = if by_row { (a, b) } else { (b, a) };
                            ok(fit.cell(i, j)).then(|| f(i, j))
                        })
                        .collect();
                    if vals.is_empty() {
                        f64::NAN
                    } else {
                        vals.iter().sum::<f64>() / vals.len() as f64
                    }
                })
                .collect()
        };
        let p = |i: usize, j: usize| &fit.cell(i, j).params;
        let coef = |by_row: bool| -> Result<Vec<Vec<f64>>> {
            let mut cols: Vec<Vec<f64>> = (0..kx)
                .map(|k| {
                    avg(&|i, j| if by_row { p(i, j).beta_w[k] } else { p(i, j).beta_h[k] }, by_row)
                })
                .collect();
            for c in &mut cols {
                if !fill_gaps(c) {
                    return Err(Error::Estimation(format!("period '{}': every cell is flagged", fit.period)));
                }
            }
            Ok((0..g).map(|a| cols.iter().map(|c| c[a]).collect()).collect())
        };
        let beta_w = coef(true)?;
        let beta_h = coef(false)?;
        let series = |r: RhoName, by_row: bool| {
            let mut v = avg(&|i, j| p(i, j).rho(r), by_row);
            fill_gaps(&mut v);
            v
        };
        let dwyw = series(RhoName::DwYw, true);
        let dhyw = series(RhoName::DhYw, true);
        let dwyh = series(RhoName::DwYh, false);
        let dhyh = series(RhoName::DhYh, false);
        let mut flat: Vec<f64> =
            (0..g * g).map(|c| if ok(&fit.cells[c]) { fit.cells[c].params.rho_ywyh } else { f64::NAN }).collect();
        let valid: Vec<f64> = flat.iter().copied().filter(|v| v.is_finite()).collect();
        let mean = valid.iter().sum::<f64>() / valid.len().max(1) as f64;
        for v in &mut flat {
            if !v.is_finite() {
                *v = mean;
            }
        }
        let ywyh = flat.chunks(g).map(<[f64]>::to_vec).collect();
        Ok(Self {
            lw: fit.thresholds.cut_w.iter().map(|y| y.ln()).collect(),
            lh: fit.thresholds.cut_h.iter().map(|y| y.ln()).collect(),
            beta_w,
            beta_h,
            dwyw,
            dhyw,
            dwyh,
            dhyh,
            ywyh,
        })
    }
}

/// Segment and position of `x` on an increasing grid; t is outside [0, 1] when
/// extrapolating.
fn segment(grid: &[f64], x: f64) -> (usize, usize, f64) {
    let n = grid.len();
    if n == 1 {
        return (0, 0, 0.0);
    }
    let k = grid.partition_point(|&g| g <= x).clamp(1, n - 1);
    let (a, b) = (grid[k - 1], grid[k]);
    (k - 1, k, (x - a) / (b - a))
}

/// Linear in log wage, held flat outside the grid.
fn lerp_flat(grid: &[f64], v: &[f64], x: f64) -> f64 {
    let (a, b, t) = segment(grid, x);
    let t = t.clamp(0.0, 1.0);
    v[a] + t * (v[b] - v[a])
}

fn lerp_vec(grid: &[f64], v: &[Vec<f64>], x: f64) -> Vec<f64> {
    let (a, b, t) = segment(grid, x);
    v[a].iter().zip(&v[b]).map(|(p, q)| p + t * (q - p)).collect()
}

#[derive(Debug, Clone)]
struct ZRow {
    x: Vec<f64>,
    weight: f64,
    den: f64,
    pre: Vec<Prefix>,
}

/// Marginal CDF tabulated on a wage grid, before and after rearrangement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalCurve {
    pub y: Vec<f64>,
    pub raw: Vec<f64>,
    pub cdf: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileResult {
    pub tau: f64,
    pub value: f64,
    /// Simulated CDF at `value`.
    pub cdf: f64,
    /// The quantile lies outside the search bracket; `value` is the bracket end.
    pub boundary: bool,
}

/// A simulated decile table plus what went into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualTable {
    pub spec: CounterfactualSpec,
    pub table: SortingTable,
    pub deciles_w: Vec<QuantileResult>,
    pub deciles_h: Vec<QuantileResult>,
    /// Decile-pair probabilities that came out negative and were set to zero.
    pub negative_cells: usize,
    /// Assembled correlation matrices that had to be projected to PD.
    pub projections: usize,
}

/// Evaluates counterfactual marginal and joint wage CDFs.
pub struct Engine<'a> {
    fits: &'a [ModelGridFit],
    spec: CounterfactualSpec,
    cfg: EngineConfig,
    sel: Curves,
    stru: Curves,
    rho: Curves,
    rho_dwdh: f64,
    rows: Vec<ZRow>,
    wsum: f64,
    bracket_w: (f64, f64),
    bracket_h: (f64, f64),
    projections: AtomicUsize,
}

fn thin_rows(rows: Vec<(Vec<f64>, f64)>, max: usize) -> Vec<(Vec<f64>, f64)> {
    if rows.len() <= max {
        return rows;
    }
    let total: f64 = rows.iter().map(|r| r.1).sum();
    let mut counts = vec![0usize; rows.len()];
    let (mut cum, mut k) = (0.0, 0);
    for (i, r) in rows.iter().enumerate() {
        cum += r.1;
        while k < max && (k as f64 + 0.5) / max as f64 * total <= cum {
            counts[i] += 1;
            k += 1;
        }
    }
    rows.into_iter()
        .zip(counts)
        .filter(|(_, c)| *c > 0)
        .map(|((z, _), c)| (z, c as f64))
        .collect()
}

fn widen(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (lo, hi) = (a.0.min(b.0), a.1.max(b.1));
    let pad = 0.25 * (hi - lo);
    ((lo - pad).max(lo / 2.0), hi + pad)
}

impl<'a> Engine<'a> {
    pub fn new(fits: &'a [ModelGridFit], spec: CounterfactualSpec, cfg: EngineConfig) -> Result<Self> {
        let n = fits.len();
        for (name, k) in [
            ("selection", spec.selection),
            ("structure", spec.structure),
            ("rho_ywyh", spec.rho_period()),
            ("composition", spec.composition),
        ] {
            if k >= n {
                return Err(Error::Spec(format!("{name} period {k} out of range ({n} fitted periods)")));
            }
        }
        if cfg.draws == 0 || cfg.quant_tol <= 0.0 || cfg.grid_points < 3 {
            return Err(Error::Spec("engine needs draws ≥ 1, quant_tol > 0 and ≥ 3 grid points".into()));
        }
        let (fs, fr) = (&fits[spec.selection], &fits[spec.structure]);
        let comp = &fits[spec.composition].composition;
        let kz = fs.first_stage.gamma_w.len();
        let kx = fr.kx();
        if comp.rows.first().is_some_and(|r| r.len() != kz) || kx > kz || fits.iter().any(|f| f.kx() != kx) {
            return Err(Error::Spec("fitted periods use different covariate designs".into()));
        }
        let weights = match spec.weights {
            CovariateWeights::Selected => &comp.weight_working,
            CovariateWeights::Population => &comp.weight_all,
        };
        let rows: Vec<(Vec<f64>, f64)> =
            comp.rows.iter().cloned().zip(weights.iter().copied()).filter(|r| r.1 > 0.0).collect();
        let rows = thin_rows(rows, cfg.max_z_rows);
        if rows.is_empty() {
            return Err(Error::Spec("composition period has no covariate rows with positive weight".into()));
        }
        let zeroed = |r: RhoName, v: f64| if spec.zero.contains(&r) { 0.0 } else { v };
        let rho_dwdh = zeroed(RhoName::DwDh, fs.first_stage.rho);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let ghk = GhkConfig::new(cfg.draws, cfg.seed);
        let rows: Vec<ZRow> = rows
            .into_par_iter()
            .map(|(z, weight)| {
                let (mw, mh) = (dot(&z, &fs.first_stage.gamma_w), dot(&z, &fs.first_stage.gamma_h));
                ZRow {
                    x: z[..kx].to_vec(),
                    weight,
                    den: bvn_cdf_unchecked(mw, mh, rho_dwdh).max(1e-300),
                    pre: prefix(mw, mh, rho_dwdh, &ghk, row_seed(cfg.seed, &z)),
                }
            })
            .collect();
        let wsum = rows.iter().map(|r| r.weight).sum();
        let mut bracket_w = fits[0].thresholds.range_w;
        let mut bracket_h = fits[0].thresholds.range_h;
        for f in fits {
            bracket_w = (bracket_w.0.min(f.thresholds.range_w.0), bracket_w.1.max(f.thresholds.range_w.1));
            bracket_h = (bracket_h.0.min(f.thresholds.range_h.0), bracket_h.1.max(f.thresholds.range_h.1));
        }
        Ok(Self {
            fits,
            sel: Curves::new(fs)?,
            stru: Curves::new(fr)?,
            rho: Curves::new(&fits[spec.rho_period()])?,
            spec,
            cfg,
            rho_dwdh,
            rows,
            wsum,
            bracket_w: widen(bracket_w, bracket_w),
            bracket_h: widen(bracket_h, bracket_h),
            projections: AtomicUsize::new(0),
        })
    }

    pub fn spec(&self) -> &CounterfactualSpec {
        &self.spec
    }

    pub fn fits(&self) -> &[ModelGridFit] {
        self.fits
    }

    pub fn projections(&self) -> usize {
        self.projections.load(Ordering::Relaxed)
    }

    pub fn bracket(&self, s: Spouse) -> (f64, f64) {
        match s {
            Spouse::Wife => self.bracket_w,
            Spouse::Husband => self.bracket_h,
        }
    }

    fn zeroed(&self, r: RhoName, v: f64) -> f64 {
        if self.spec.zero.contains(&r) {
            0.0
        } else {
            v
        }
    }

    /// Counterfactual local parameters at a wage pair.
    pub fn local_params(&self, y_w: f64, y_h: f64) -> LocalParams {
        let (lw, lh) = (y_w.ln(), y_h.ln());
        let (s, r) = (&self.sel, &self.rho);
        let (a, b, t) = segment(&r.lw, lw);
        let (c, d, u) = segment(&r.lh, lh);
        let (t, u) = (t.clamp(0.0, 1.0), u.clamp(0.0, 1.0));
        let at = |i: usize| r.ywyh[i][c] + u * (r.ywyh[i][d] - r.ywyh[i][c]);
        let ywyh = at(a) + t * (at(b) - at(a));
        LocalParams {
            beta_w: lerp_vec(&self.stru.lw, &self.stru.beta_w, lw),
            beta_h: lerp_vec(&self.stru.lh, &self.stru.beta_h, lh),
            rho_dwdh: self.rho_dwdh,
            rho_dwyw: self.zeroed(RhoName::DwYw, lerp_flat(&s.lw, &s.dwyw, lw)),
            rho_dhyw: self.zeroed(RhoName::DhYw, lerp_flat(&s.lw, &s.dhyw, lw)),
            rho_dwyh: self.zeroed(RhoName::DwYh, lerp_flat(&s.lh, &s.dwyh, lh)),
            rho_dhyh: self.zeroed(RhoName::DhYh, lerp_flat(&s.lh, &s.dhyh, lh)),
            rho_ywyh: self.zeroed(RhoName::YwYh, ywyh),
            cell: (usize::MAX, usize::MAX),
        }
    }

    /// Coefficients and Cholesky row of the spouse's wage dimension in the
    /// trivariate (D_w, D_h, Y) marginal model.
    fn marginal_factor(&self, s: Spouse, y: f64) -> (Vec<f64>, [f64; 3]) {
        let ly = y.ln();
        let c = &self.sel;
        let (beta, r0, r1) = match s {
            Spouse::Wife => (
                lerp_vec(&self.stru.lw, &self.stru.beta_w, ly),
                self.zeroed(RhoName::DwYw, lerp_flat(&c.lw, &c.dwyw, ly)),
                self.zeroed(RhoName::DhYw, lerp_flat(&c.lw, &c.dhyw, ly)),
            ),
            Spouse::Husband => (
                lerp_vec(&self.stru.lh, &self.stru.beta_h, ly),
                self.zeroed(RhoName::DwYh, lerp_flat(&c.lh, &c.dwyh, ly)),
                self.zeroed(RhoName::DhYh, lerp_flat(&c.lh, &c.dhyh, ly)),
            ),
        };
        (beta, self.chol3(r0, r1))
    }

    fn chol3(&self, r0: f64, r1: f64) -> [f64; 3] {
        let d = self.rho_dwdh;
        let l11 = (1.0 - d * d).sqrt();
        let l21 = (r1 - d * r0) / l11;
        let rest = 1.0 - r0 * r0 - l21 * l21;
        if rest > PD_EPS {
            return [r0, l21, rest.sqrt()];
        }
        self.projections.fetch_add(1, Ordering::Relaxed);
        let rows = vec![vec![1.0, d, r0], vec![d, 1.0, r1], vec![r0, r1, 1.0]];
        match project_to_pd(&rows, PD_EPS).and_then(|p| p.matrix.cholesky()) {
            Ok(l) => [l[2][0], l[2][1], l[2][2]],
            Err(_) => [0.0, 0.0, 1.0],
        }
    }

    fn chol4(&self, p: &LocalParams) -> Result<[[f64; MAX_DIM]; MAX_DIM]> {
        let s = assemble_sigma(p)?;
        if s.projected {
            self.projections.fetch_add(1, Ordering::Relaxed);
        }
        s.corr.cholesky()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Per-draw weights of P(D_w = D_h = 1, Y_s ≤ y | z) (not divided by Φ₂).
    fn marginal_draws<'r>(row: &'r ZRow, beta: &[f64], l: &[f64; 3]) -> impl Iterator<Item = f64> + 'r {
        let mu = Self::dot(&row.x, beta);
        let (l0, l1, l2) = (l[0], l[1], l[2]);
        row.pre.iter().map(move |p| p.w01 * ((mu - l0 * p.e0 - l1 * p.e1) / l2).ncdf())
    }

    /// Selection-conditional marginal CDF averaged over covariates.
    pub fn marginal_cdf(&self, s: Spouse, y: f64) -> f64 {
        let (beta, l) = self.marginal_factor(s, y);
        self.rows
            .iter()
            .map(|r| r.weight * Self::marginal_draws(r, &beta, &l).sum::<f64>() / (r.pre.len() as f64 * r.den))
            .sum::<f64>()
            / self.wsum
    }

    pub fn marginal_curve(&self, s: Spouse) -> MarginalCurve {
        let (lo, hi) = self.bracket(s);
        let m = self.cfg.grid_points;
        let y: Vec<f64> = (0..m)
            .map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (m - 1) as f64).exp())
            .collect();
        let raw: Vec<f64> = y.par_iter().map(|&v| self.marginal_cdf(s, v)).collect();
        let mut cdf = raw.clone();
        crate::distreg::rearrange(&mut cdf);
        MarginalCurve { y, raw, cdf }
    }

    /// τ-quantile of the counterfactual marginal: bracketed on the rearranged
    /// curve, then bisected on the simulated CDF.
    pub fn quantile_from(&self, curve: &MarginalCurve, s: Spouse, tau: f64) -> QuantileResult {
        let k = curve.cdf.partition_point(|&f| f < tau);
        if k == 0 || k == curve.cdf.len() {
            let value = if k == 0 { curve.y[0] } else { curve.y[curve.y.len() - 1] };
            warn!("{s:?} quantile {tau} outside [{:.3}, {:.3}]", curve.y[0], curve.y[curve.y.len() - 1]);
            return QuantileResult { tau, value, cdf: self.marginal_cdf(s, value), boundary: true };
        }
        let (mut lo, mut hi) = (curve.y[k - 1], curve.y[k]);
        while hi - lo > self.cfg.quant_tol {
            let mid = 0.5 * (lo + hi);
            if self.marginal_cdf(s, mid) < tau {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let value = 0.5 * (lo + hi);
        QuantileResult { tau, value, cdf: self.marginal_cdf(s, value), boundary: false }
    }

    pub fn quantile(&self, s: Spouse, tau: f64) -> QuantileResult {
        self.quantile_from(&self.marginal_curve(s), s, tau)
    }

    pub fn deciles(&self, s: Spouse) -> Vec<QuantileResult> {
        let curve = self.marginal_curve(s);
        (1..DECILES).map(|k| self.quantile_from(&curve, s, k as f64 / DECILES as f64)).collect()
    }

    /// Selection-conditional joint CDF averaged over covariates.
    pub fn joint_cdf(&self, y_w: f64, y_h: f64) -> Result<f64> {
        if y_w.is_nan() || y_h.is_nan() {
            return Err(Error::Domain("joint CDF at NaN".into()));
        }
        if y_w <= 0.0 || y_h <= 0.0 {
            return Ok(0.0);
        }
        match (y_w.is_infinite(), y_h.is_infinite()) {
            (true, true) => return Ok(1.0),
            (true, false) => return Ok(self.marginal_cdf(Spouse::Husband, y_h)),
            (false, true) => return Ok(self.marginal_cdf(Spouse::Wife, y_w)),
            _ => {}
        }
        let p = self.local_params(y_w, y_h);
        let l = self.chol4(&p)?;
        Ok(self
            .rows
            .iter()
            .map(|r| {
                let (mw, mh) = (Self::dot(&r.x, &p.beta_w), Self::dot(&r.x, &p.beta_h));
                r.weight * r.pre.iter().map(|d| joint_draw(d, mw, mh, &l)).sum::<f64>() / (r.pre.len() as f64 * r.den)
            })
            .sum::<f64>()
            / self.wsum)
    }

    /// Probabilities of the decile-pair rectangles between the given wife and
    /// husband cutoffs (nine each), with Monte Carlo standard errors. All
    /// corners share the draws of a covariate row.
    pub fn rectangle_probabilities(&self, qw: &[f64], qh: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let (m, n) = (qw.len(), qh.len());
        let fw: Vec<(Vec<f64>, [f64; 3])> = qw.iter().map(|&y| self.marginal_factor(Spouse::Wife, y)).collect();
        let fh: Vec<(Vec<f64>, [f64; 3])> = qh.iter().map(|&y| self.marginal_factor(Spouse::Husband, y)).collect();
        let mut corners = Vec::with_capacity(m * n);
        for &yw in qw {
            for &yh in qh {
                let p = self.local_params(yw, yh);
                let l = self.chol4(&p)?;
                corners.push((p.beta_w, p.beta_h, l));
            }
        }
        let per_row: Vec<(Vec<f64>, Vec<f64>)> = self
            .rows
            .par_iter()
            .map(|r| {
                let nd = r.pre.len();
                // cumulative weights G(i, j) on the (m + 2) × (n + 2) lattice of cutoffs
                let (gm, gn) = (m + 2, n + 2);
                let mut g = vec![0.0; gm * gn * nd];
                let at = |i: usize, j: usize, d: usize| (i * gn + j) * nd + d;
                for (d, p) in r.pre.iter().enumerate() {
                    g[at(m + 1, n + 1, d)] = p.w01;
                }
                for (i, (b, l)) in fw.iter().enumerate() {
                    for (d, w) in Self::marginal_draws(r, b, l).enumerate() {
                        g[at(i + 1, n + 1, d)] = w;
                    }
                }
                for (j, (b, l)) in fh.iter().enumerate() {
                    for (d, w) in Self::marginal_draws(r, b, l).enumerate() {
                        g[at(m + 1, j + 1, d)] = w;
                    }
                }
                for i in 0..m {
                    for j in 0..n {
                        let (bw, bh, l) = &corners[i * n + j];
                        let (mw, mh) = (Self::dot(&r.x, bw), Self::dot(&r.x, bh));
                        for (d, p) in r.pre.iter().enumerate() {
                            g[at(i + 1, j + 1, d)] = joint_draw(p, mw, mh, l);
                        }
                    }
                }
                let mut mean = vec![0.0; (m + 1) * (n + 1)];
                let mut var = vec![0.0; (m + 1) * (n + 1)];
                for i in 0..=m {
                    for j in 0..=n {
                        let (mut s1, mut s2) = (0.0, 0.0);
                        for d in 0..nd {
                            let v = g[at(i + 1, j + 1, d)] - g[at(i, j + 1, d)] - g[at(i + 1, j, d)] + g[at(i, j, d)];
                            s1 += v;
                            s2 += v * v;
                        }
                        let mu = s1 / nd as f64;
                        let v = if nd > 1 { (s2 / nd as f64 - mu * mu).max(0.0) / (nd - 1) as f64 } else { 0.0 };
                        mean[i * (n + 1) + j] = mu / r.den;
                        var[i * (n + 1) + j] = v / (r.den * r.den);
                    }
                }
                (mean, var)
            })
            .collect();
        let mut p = vec![vec![0.0; n + 1]; m + 1];
        let mut se = vec![vec![0.0; n + 1]; m + 1];
        for (r, (mean, var)) in self.rows.iter().zip(&per_row) {
            let w = r.weight / self.wsum;
            for i in 0..=m {
                for j in 0..=n {
                    p[i][j] += w * mean[i * (n + 1) + j];
                    se[i][j] += w * w * var[i * (n + 1) + j];
                }
            }
        }
        for row in &mut se {
            for v in row.iter_mut() {
                *v = v.sqrt();
            }
        }
        Ok((p, se))
    }

    /// Decile sorting table of the counterfactual joint distribution.
    pub fn sorting_table(&self) -> Result<CounterfactualTable> {
        let dw = self.deciles(Spouse::Wife);
        let dh = self.deciles(Spouse::Husband);
        let qw: Vec<f64> = dw.iter().map(|q| q.value).collect();
        let qh: Vec<f64> = dh.iter().map(|q| q.value).collect();
        let (p, se) = self.rectangle_probabilities(&qw, &qh)?;
        Ok(self.finish_table(p, se, dw, dh))
    }

    fn finish_table(
        &self,
        p: Vec<Vec<f64>>,
        se: Vec<Vec<f64>>,
        dw: Vec<QuantileResult>,
        dh: Vec<QuantileResult>,
    ) -> CounterfactualTable {
        let negative_cells = p.iter().flatten().filter(|&&v| v < 0.0).count();
        if negative_cells > 0 {
            warn!("{negative_cells} decile cells with negative simulated mass set to zero");
        }
        let clamped: Vec<Vec<f64>> = p.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect();
        let source = if self.spec == CounterfactualSpec::fitted(self.spec.structure) {
            TableSource::Model
        } else {
            TableSource::Counterfactual
        };
        let mut table = SortingTable::from_probabilities(&clamped, source);
        let scale = (DECILES * DECILES) as f64;
        table.std_errors = Some(se.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect());
        CounterfactualTable {
            spec: self.spec.clone(),
            table,
            deciles_w: dw,
            deciles_h: dh,
            negative_cells,
            projections: self.projections(),
        }
    }
}

#[inline]
fn joint_draw(p: &Prefix, mu_yw: f64, mu_yh: f64, l: &[[f64; MAX_DIM]; MAX_DIM]) -> f64 {
    let m2 = l[2][0] * p.e0 + l[2][1] * p.e1;
    let p2 = ((mu_yw - m2) / l[2][2]).ncdf();
    let e2 = p2.truncated_draw(p.u2);
    let m3 = l[3][0] * p.e0 + l[3][1] * p.e1 + l[3][2] * e2;
    p.w01 * p2 * ((mu_yh - m3) / l[3][3]).ncdf()
}

/// Sorting table of the counterfactual distribution.
pub fn model_sorting_measure(
    fits: &[ModelGridFit],
    spec: &CounterfactualSpec,
    cfg: &EngineConfig,
) -> Result<CounterfactualTable> {
    Engine::new(fits, spec.clone(), cfg.clone())?.sorting_table()
}

/// The fitted table of one period, computed corner by corner with the generic
/// orthant simulator on draws independent of [`Engine`]'s.
pub fn fitted_sorting_table(fits: &[ModelGridFit], period: usize, cfg: &EngineConfig) -> Result<CounterfactualTable> {
    let eng = Engine::new(fits, CounterfactualSpec::fitted(period), cfg.clone())?;
    let dw = eng.deciles(Spouse::Wife);
    let dh = eng.deciles(Spouse::Husband);
    let qw: Vec<f64> = dw.iter().map(|q| q.value).collect();
    let qh: Vec<f64> = dh.iter().map(|q| q.value).collect();
    let fit = &fits[period];
    let (gw, gh) = (&fit.first_stage.gamma_w, &fit.first_stage.gamma_h);
    let comp = &fit.composition;
    let rows: Vec<(Vec<f64>, f64)> =
        comp.rows.iter().cloned().zip(comp.weight_working.iter().copied()).filter(|r| r.1 > 0.0).collect();
    let rows = thin_rows(rows, cfg.max_z_rows);
    let wsum: f64 = rows.iter().map(|r| r.1).sum();
    let kx = fit.kx();
    let (m, n) = (qw.len(), qh.len());
    // (mean, var) of the lattice function G on (m + 2) × (n + 2) points
    let mut g = vec![vec![(0.0, 0.0); n + 2]; m + 2];
    let ghk_seed = mix_seed(cfg.seed, 0x0f17_7ed0);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let corners: Vec<(usize, usize)> = (1..=m + 1).flat_map(|i| (1..=n + 1).map(move |j| (i, j))).collect();
    let values: Vec<(f64, f64)> = corners
        .par_iter()
        .map(|&(i, j)| -> Result<(f64, f64)> {
            let yw = if i <= m { qw[i - 1] } else { f64::INFINITY };
            let yh = if j <= n { qh[j - 1] } else { f64::INFINITY };
            let (byw, byh) = (yw.min(eng.bracket_w.1), yh.min(eng.bracket_h.1));
            let p = eng.local_params(byw, byh);
            let corr = assemble_sigma(&p)?.corr;
            let (mut mean, mut var) = (0.0, 0.0);
            for (z, w) in &rows {
                let x = &z[..kx];
                let lim = [
                    dot(z, gw),
                    dot(z, gh),
                    if yw.is_finite() { dot(x, &p.beta_w) } else { f64::INFINITY },
                    if yh.is_finite() { dot(x, &p.beta_h) } else { f64::INFINITY },
                ];
                let den = bvn_cdf_unchecked(lim[0], lim[1], corr.get(0, 1)).max(1e-300);
                let cfg = GhkConfig::new(cfg.draws, row_seed(ghk_seed, z));
                let est = orthant_with_config(&lim, &corr, &cfg)?;
                mean += w / wsum * est.prob / den;
                var += (w / wsum * est.std_error / den).powi(2);
            }
            Ok((mean, var))
        })
        .collect::<Result<Vec<_>>>()?;
    for (&(i, j), v) in corners.iter().zip(values) {
        g[i][j] = v;
    }
    let mut p = vec![vec![0.0; n + 1]; m + 1];
    let mut se = vec![vec![0.0; n + 1]; m + 1];
    for i in 0..=m {
        for j in 0..=n {
            let pts = [(i + 1, j + 1, 1.0), (i, j + 1, -1.0), (i + 1, j, -1.0), (i, j, 1.0)];
            p[i][j] = pts.iter().map(|&(a, b, s)| s * g[a][b].0).sum();
            se[i][j] = pts.iter().map(|&(a, b, _)| g[a][b].1).sum::<f64>().sqrt();
        }
    }
    Ok(eng.finish_table(p, se, dw, dh))
}

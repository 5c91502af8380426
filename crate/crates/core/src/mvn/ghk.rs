//! The GHK (Geweke–Hajivassiliou–Keane) simulator for multivariate normal
//! orthant and rectangle probabilities, plus the conditional-sampling estimator
//! of ∂Φ_N/∂ρ_ij.
//!
//! Sequential conditioning follows the input order of the dimensions; there is
//! no variable reordering. Limits equal to +∞ drop their dimension before the
//! Cholesky factorization, a −∞ limit makes the probability exactly zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bvn::bvn_pdf_unchecked;
use super::corr::{CorrelationMatrix, MAX_DIM};
use super::dual::Real;
use super::normal::std_normal_cdf;
use crate::{Error, Result};

/// Point set driving the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sequence {
    /// Halton points in bases 2, 3, 5 with a seeded Cranley–Patterson shift.
    #[default]
    Halton,
    /// Plain pseudo-random uniforms.
    PseudoRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhkConfig {
    pub draws: usize,
    pub seed: u64,
    #[serde(default)]
    pub sequence: Sequence,
}

impl GhkConfig {
    pub fn new(draws: usize, seed: u64) -> Self {
        Self { draws, seed, sequence: Sequence::Halton }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// A simulated probability and the standard error of its per-draw weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhkEstimate {
    pub prob: f64,
    pub std_error: f64,
}

impl GhkEstimate {
    fn exact(prob: f64) -> Self {
        Self { prob, std_error: 0.0 }
    }
}

/// Upper limits, correlation and sampler settings for Φ_N(limits; Σ).
#[derive(Debug, Clone, PartialEq)]
pub struct OrthantQuery {
    pub upper_limits: Vec<f64>,
    pub corr: CorrelationMatrix,
    pub draws: usize,
    pub seed: u64,
    pub sequence: Sequence,
}

impl OrthantQuery {
    pub fn new(upper_limits: Vec<f64>, corr: CorrelationMatrix, draws: usize, seed: u64) -> Self {
        Self { upper_limits, corr, draws, seed, sequence: Sequence::Halton }
    }

    fn config(&self) -> GhkConfig {
        GhkConfig { draws: self.draws, seed: self.seed, sequence: self.sequence }
    }
}

/// SplitMix64 finalizer, used to derive independent per-item seeds.
pub fn mix_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const PRIMES: [u32; MAX_DIM - 1] = [2, 3, 5];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % b) as f64;
        i /= b;
        f *= inv;
    }
    r
}

/// Uniform points in (0,1)^3; only the first `dims` coordinates are filled.
pub fn uniform_points(dims: usize, cfg: &GhkConfig) -> Vec<[f64; MAX_DIM - 1]> {
    assert!(dims < MAX_DIM, "at most {} sampled dimensions", MAX_DIM - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let open = |u: f64| u.clamp(1e-16, 1.0 - 1e-16);
    match cfg.sequence {
        Sequence::Halton => {
            let mut shift = [0.0; MAX_DIM - 1];
            for s in shift.iter_mut().take(dims) {
                *s = rng.random::<f64>();
            }
            (0..cfg.draws)
                .map(|i| {
                    let mut p = [0.5; MAX_DIM - 1];
                    for k in 0..dims {
                        let u = radical_inverse(i as u64 + 1, PRIMES[k]) + shift[k];
                        p[k] = open(u - u.floor());
                    }
                    p
                })
                .collect()
        }
        Sequence::PseudoRandom => (0..cfg.draws)
            .map(|_| {
                let mut p = [0.5; MAX_DIM - 1];
                for x in p.iter_mut().take(dims) {
                    *x = open(rng.random::<f64>());
                }
                p
            })
            .collect(),
    }
}

pub(crate) fn cholesky_generic<T: Real>(
    a: &[[T; MAX_DIM]; MAX_DIM],
    dim: usize,
) -> Option<[[T; MAX_DIM]; MAX_DIM]> {
    let mut l = [[T::cst(0.0); MAX_DIM]; MAX_DIM];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s = s - l[i][k] * l[j][k];
            }
            if i == j {
                if !(s.value() > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// One GHK path: returns the importance weight Π_k Φ(b_k) for the point `u`.
#[inline]
pub(crate) fn ghk_weight<T: Real>(
    limits: &[T],
    chol: &[[T; MAX_DIM]; MAX_DIM],
    u: &[f64; MAX_DIM - 1],
) -> T {
    let n = limits.len();
    let mut e = [T::cst(0.0); MAX_DIM];
    let mut w = T::cst(1.0);
    for k in 0..n {
        let mut m = T::cst(0.0);
        for j in 0..k {
            m = m + chol[k][j] * e[j];
        }
        let p = ((limits[k] - m) / chol[k][k]).ncdf();
        w = w * p;
        if k + 1 < n {
            e[k] = p.truncated_draw(u[k]);
        }
    }
    w
}

/// Drops +∞ limits; `None` when some limit is −∞ (probability zero).
fn reduce(limits: &[f64], corr: &CorrelationMatrix) -> Result<Option<(Vec<f64>, Vec<usize>)>> {
    if limits.len() != corr.dim() {
        return Err(Error::Domain(format!(
            "{} limits for a dimension-{} correlation matrix",
            limits.len(),
            corr.dim()
        )));
    }
    if limits.iter().any(|x| x.is_nan()) {
        return Err(Error::Domain("NaN integration limit".into()));
    }
    if limits.iter().any(|&x| x == f64::NEG_INFINITY) {
        return Ok(None);
    }
    let keep: Vec<usize> = (0..limits.len()).filter(|&k| limits[k] != f64::INFINITY).collect();
    Ok(Some((keep.iter().map(|&k| limits[k]).collect(), keep)))
}

/// Per-draw GHK weights for one orthant; `None` encodes a degenerate answer
/// (exactly 0 or 1) that needs no simulation.
fn orthant_weights(
    limits: &[f64],
    corr: &CorrelationMatrix,
    cfg: &GhkConfig,
    points: Option<&[[f64; MAX_DIM - 1]]>,
) -> Result<std::result::Result<Vec<f64>, f64>> {
    let Some((lim, keep)) = reduce(limits, corr)? else {
        return Ok(Err(0.0));
    };
    if lim.is_empty() {
        return Ok(Err(1.0));
    }
    if lim.len() == 1 {
        return Ok(Err(std_normal_cdf(lim[0])));
    }
    let sub = corr.select(&keep)?;
    let chol = sub.cholesky()?;
    let owned;
    let pts = match points {
        Some(p) => p,
        None => {
            owned = uniform_points(lim.len() - 1, cfg);
            &owned
        }
    };
    Ok(Ok(pts.iter().map(|u| ghk_weight(&lim, &chol, u)).collect()))
}

fn summarize(w: &[f64]) -> GhkEstimate {
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = if w.len() > 1 {
        w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    GhkEstimate { prob: mean, std_error: (var / n).sqrt() }
}

fn check_draws(draws: usize) -> Result<()> {
    if draws < 100 {
        return Err(Error::Domain(format!("GHK needs at least 100 draws, got {draws}")));
    }
    Ok(())
}

/// GHK estimate of Φ_N(upper_limits; Σ).
pub fn mvn_cdf_ghk(q: &OrthantQuery) -> Result<GhkEstimate> {
    check_draws(q.draws)?;
    orthant_with_config(&q.upper_limits, &q.corr, &q.config())
}

pub fn orthant_with_config(
    limits: &[f64],
    corr: &CorrelationMatrix,
    cfg: &GhkConfig,
) -> Result<GhkEstimate> {
    Ok(match orthant_weights(limits, corr, cfg, None)? {
        Ok(w) => summarize(&w),
        Err(p) => GhkEstimate::exact(p),
    })
}

/// P(lower < X ≤ upper) by inclusion–exclusion over the 2^N corners, all corners
/// sharing one point set. The result is clamped at zero.
pub fn mvn_rectangle(
    lower: &[f64],
    upper: &[f64],
    corr: &CorrelationMatrix,
    cfg: &GhkConfig,
) -> Result<GhkEstimate> {
    check_draws(cfg.draws)?;
    let n = corr.dim();
    if lower.len() != n || upper.len() != n {
        return Err(Error::Domain("rectangle bounds do not match the dimension".into()));
    }
    if lower.iter().zip(upper).any(|(l, u)| l > u || l.is_nan() || u.is_nan()) {
        return Err(Error::Domain("rectangle needs lower ≤ upper".into()));
    }
    if lower.iter().zip(upper).any(|(l, u)| l == u) {
        return Ok(GhkEstimate::exact(0.0));
    }
    let points = uniform_points(n - 1, cfg);
    let mut total = vec![0.0; cfg.draws];
    for mask in 0u32..(1 << n) {
        let mut lim = Vec::with_capacity(n);
        let mut sign = 1.0;
        for k in 0..n {
            if mask & (1 << k) != 0 {
                lim.push(lower[k]);
                sign = -sign;
            } else {
                lim.push(upper[k]);
            }
        }
        match orthant_weights(&lim, corr, cfg, Some(&points))? {
            Ok(w) => total.iter_mut().zip(&w).for_each(|(t, x)| *t += sign * x),
            Err(p) => total.iter_mut().for_each(|t| *t += sign * p),
        }
    }
    let mut est = summarize(&total);
    est.prob = est.prob.max(0.0);
    Ok(est)
}

/// ∂Φ_N(x; Σ)/∂ρ_ij via the conditional representation
/// E[φ₂(z_{i:3}, z_{j:3}; ρ_{ij:3}) | X₃ ≤ x₃] Φ_{N-2}(x₃; Σ₃₃) / (σ_{i:3} σ_{j:3}),
/// where X₃ collects the remaining dimensions and is sampled by GHK inside its orthant.
pub fn mvn_cdf_drho(
    x: &[f64],
    corr: &CorrelationMatrix,
    i: usize,
    j: usize,
    cfg: &GhkConfig,
) -> Result<GhkEstimate> {
    let n = corr.dim();
    if x.len() != n {
        return Err(Error::Domain("limit vector does not match the dimension".into()));
    }
    if i >= n || j >= n || i == j {
        return Err(Error::Domain(format!("invalid index pair ({i},{j}) for dimension {n}")));
    }
    check_draws(cfg.draws)?;
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("NaN limit".into()));
    }
    if !x[i].is_finite() || !x[j].is_finite() || x.iter().any(|&v| v == f64::NEG_INFINITY) {
        return Ok(GhkEstimate::exact(0.0));
    }
    let rest: Vec<usize> = (0..n)
        .filter(|&k| k != i && k != j && x[k] != f64::INFINITY)
        .collect();
    let rho = corr.get(i, j);
    if rest.is_empty() {
        return Ok(GhkEstimate::exact(bvn_pdf_unchecked(x[i], x[j], rho)));
    }
    let m = rest.len();
    let s33 = corr.select(&rest)?;
    // Σ₃₃⁻¹ for m ∈ {1, 2}
    let inv: [[f64; 2]; 2] = if m == 1 {
        [[1.0, 0.0], [0.0, 0.0]]
    } else {
        let r = s33.get(0, 1);
        let det = 1.0 - r * r;
        [[1.0 / det, -r / det], [-r / det, 1.0 / det]]
    };
    let s13: Vec<f64> = rest.iter().map(|&k| corr.get(i, k)).collect();
    let s23: Vec<f64> = rest.iter().map(|&k| corr.get(j, k)).collect();
    let apply = |v: &[f64]| -> [f64; 2] {
        let mut out = [0.0; 2];
        for a in 0..m {
            for b in 0..m {
                out[a] += inv[a][b] * v[b];
            }
        }
        out
    };
    let a1 = apply(&s13); // Σ₃₃⁻¹ Σ₁₃
    let a2 = apply(&s23);
    let dot = |u: &[f64], v: &[f64]| (0..m).map(|k| u[k] * v[k]).sum::<f64>();
    let var1 = 1.0 - dot(&s13, &a1);
    let var2 = 1.0 - dot(&s23, &a2);
    if !(var1 > 0.0 && var2 > 0.0) {
        return Err(Error::Matrix("singular conditional covariance".into()));
    }
    let (sd1, sd2) = (var1.sqrt(), var2.sqrt());
    let rho_c = (rho - dot(&s13, &a2)) / (sd1 * sd2);
    if !(rho_c.abs() < 1.0) {
        return Err(Error::Matrix("conditional correlation outside (-1,1)".into()));
    }
    let chol = s33.cholesky()?;
    let x3: Vec<f64> = rest.iter().map(|&k| x[k]).collect();
    let points = uniform_points(m, cfg);
    let vals: Vec<f64> = points
        .iter()
        .map(|u| {
            let mut e = [0.0; MAX_DIM];
            let mut w = 1.0;
            let mut xs = [0.0; 2];
            for k in 0..m {
                let mean: f64 = (0..k).map(|l| chol[k][l] * e[l]).sum();
                let p = std_normal_cdf((x3[k] - mean) / chol[k][k]);
                w *= p;
                e[k] = p.truncated_draw(u[k]);
            }
            for (k, xk) in xs.iter_mut().enumerate().take(m) {
                *xk = (0..=k).map(|l| chol[k][l] * e[l]).sum();
            }
            let z1 = (x[i] - dot(&a1, &xs)) / sd1;
            let z2 = (x[j] - dot(&a2, &xs)) / sd2;
            w * bvn_pdf_unchecked(z1, z2, rho_c) / (sd1 * sd2)
        })
        .collect();
    Ok(summarize(&vals))
}

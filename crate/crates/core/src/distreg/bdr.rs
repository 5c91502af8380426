use serde::{Deserialize, Serialize};

use super::biprobit::cell_loglik;
use super::design::Design;
use super::probit::{probit_fit, ProbitFit};
use crate::optim::brent_root;
use crate::{Error, Result};

const THETA_MAX: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdrRhoFit {
    pub rho: f64,
    pub rho_se: f64,
    pub loglik: f64,
    /// The score did not change sign inside |ρ| < tanh(5).
    pub boundary: bool,
}

/// Log-likelihood and its derivative in θ = atanh ρ with both indices held fixed.
fn rho_objective(ind_w: &[bool], ind_h: &[bool], mu_w: &[f64], mu_h: &[f64], w: Option<&[f64]>, theta: f64) -> (f64, f64) {
    let rho = theta.tanh();
    let (mut ll, mut score) = (0.0, 0.0);
    for i in 0..ind_w.len() {
        let wi = w.map_or(1.0, |w| w[i]);
        if wi == 0.0 {
            continue;
        }
        let qw = if ind_w[i] { 1.0 } else { -1.0 };
        let qh = if ind_h[i] { 1.0 } else { -1.0 };
        let (l, d) = cell_loglik(mu_w[i], mu_h[i], rho, qw, qh);
        ll += wi * l;
        score += wi * d[2] * (1.0 - rho * rho);
    }
    (ll, score)
}

/// One-parameter bivariate probit for ρ with plugged-in indices.
pub fn bdr_rho_fit(
    ind_w: &[bool],
    ind_h: &[bool],
    mu_w: &[f64],
    mu_h: &[f64],
    weights: Option<&[f64]>,
) -> Result<BdrRhoFit> {
    let n = ind_w.len();
    if ind_h.len() != n || mu_w.len() != n || mu_h.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::Estimation("bdr inputs differ in length".into()));
    }
    if mu_w.iter().chain(mu_h).any(|m| !m.is_finite()) {
        return Err(Error::Domain("non-finite plug-in index".into()));
    }
    let obj = |t: f64| rho_objective(ind_w, ind_h, mu_w, mu_h, weights, t);
    // walk outward from θ = 0 in the ascent direction until the score turns
    let s0 = obj(0.0).1;
    let dir = if s0 >= 0.0 { 1.0 } else { -1.0 };
    let step = 0.25;
    let mut prev = 0.0;
    let mut found = None;
    while prev * dir < THETA_MAX {
        let t = prev + dir * step;
        let (ll_t, s_t) = obj(t);
        if !ll_t.is_finite() || !s_t.is_finite() || s_t * dir <= 0.0 {
            found = Some((prev, t));
            break;
        }
        prev = t;
    }
    let (theta, boundary) = match found {
        Some((a, b)) if obj(a).1 * obj(b).1 <= 0.0 => {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            (brent_root(|t| obj(t).1, lo, hi, 1e-12, 200).unwrap_or(a), false)
        }
        Some((a, _)) => (a, a.abs() >= THETA_MAX - 1e-12),
        None => (prev, true),
    };
    let (ll, _) = obj(theta);
    let h = 1e-4;
    let info = -(obj(theta + h).1 - obj(theta - h).1) / (2.0 * h);
    let rho = theta.tanh();
    let rho_se = if info > 0.0 { (1.0 - rho * rho) / info.sqrt() } else { f64::NAN };
    Ok(BdrRhoFit { rho, rho_se, loglik: ll, boundary })
}

/// Bivariate distribution regression at one pair of cutoffs, without selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdrCellFit {
    pub beta_w: ProbitFit,
    pub beta_h: ProbitFit,
    pub rho: BdrRhoFit,
    /// Joint log-likelihood of the four-cell bivariate probit at the estimates.
    pub loglik: f64,
}

pub fn bdr_cell_fit(
    y_w: &[f64],
    y_h: &[f64],
    design: &Design,
    cut_w: f64,
    cut_h: f64,
    weights: Option<&[f64]>,
) -> Result<BdrCellFit> {
    let iw: Vec<bool> = y_w.iter().map(|&y| y <= cut_w).collect();
    let ih: Vec<bool> = y_h.iter().map(|&y| y <= cut_h).collect();
    let beta_w = probit_fit(&iw, design, weights)?;
    let beta_h = probit_fit(&ih, design, weights)?;
    let n = design.nrows();
    let mu_w: Vec<f64> = (0..n).map(|i| design.index(i, &beta_w.coefficients)).collect();
    let mu_h: Vec<f64> = (0..n).map(|i| design.index(i, &beta_h.coefficients)).collect();
    let rho = bdr_rho_fit(&iw, &ih, &mu_w, &mu_h, weights)?;
    Ok(BdrCellFit { loglik: rho.loglik, beta_w, beta_h, rho })
}

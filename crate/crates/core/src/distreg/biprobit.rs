use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::design::Design;
use super::probit::probit_fit;
use crate::mvn::{bvn_cdf_unchecked, bvn_pdf_unchecked, std_normal_cdf, std_normal_pdf};
use crate::optim::{bfgs, hessian_from_gradient, OptimConfig};
use crate::{Error, Result};

/// Bivariate probit of (d_w, d_h) on a common design, P(1,1) = Φ₂(z'γ_w, z'γ_h; ρ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiprobitFit {
    pub gamma_w: Vec<f64>,
    pub gamma_h: Vec<f64>,
    pub rho: f64,
    #[serde(with = "crate::serde_float")]
    pub rho_se: f64,
    #[serde(with = "crate::serde_float::vec")]
    pub se_w: Vec<f64>,
    #[serde(with = "crate::serde_float::vec")]
    pub se_h: Vec<f64>,
    /// Covariance of (γ_w, γ_h, atanh ρ).
    pub vcov: Vec<Vec<f64>>,
    #[serde(with = "crate::serde_float")]
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl BiprobitFit {
    pub fn index_w(&self, z: &[f64]) -> f64 {
        z.iter().zip(&self.gamma_w).map(|(a, b)| a * b).sum()
    }

    pub fn index_h(&self, z: &[f64]) -> f64 {
        z.iter().zip(&self.gamma_h).map(|(a, b)| a * b).sum()
    }

    /// P(D_w = 1, D_h = 1 | z).
    pub fn p_both(&self, z: &[f64]) -> f64 {
        bvn_cdf_unchecked(self.index_w(z), self.index_h(z), self.rho)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BiprobitOptions {
    /// Hold ρ at this value instead of estimating it.
    pub fix_rho: Option<f64>,
}

/// log Φ₂(qa, qb; r) and its derivatives in (a, b, ρ) for outcome signs (qw, qh).
#[inline]
pub(crate) fn cell_loglik(a: f64, b: f64, rho: f64, qw: f64, qh: f64) -> (f64, [f64; 3]) {
    let (qa, qb, r) = (qw * a, qh * b, qw * qh * rho);
    let s = (1.0 - rho * rho).sqrt();
    let p = bvn_cdf_unchecked(qa, qb, r).max(1e-300);
    let da = qw * std_normal_pdf(qa) * std_normal_cdf((qb - r * qa) / s);
    let db = qh * std_normal_pdf(qb) * std_normal_cdf((qa - r * qb) / s);
    let dr = qw * qh * bvn_pdf_unchecked(qa, qb, r);
    (p.ln(), [da / p, db / p, dr / p])
}

pub fn biprobit_fit(d_w: &[bool], d_h: &[bool], design: &Design, weights: Option<&[f64]>) -> Result<BiprobitFit> {
    biprobit_fit_with(d_w, d_h, design, weights, &BiprobitOptions::default())
}

pub fn biprobit_fit_with(
    d_w: &[bool],
    d_h: &[bool],
    design: &Design,
    weights: Option<&[f64]>,
    opts: &BiprobitOptions,
) -> Result<BiprobitFit> {
    let n = design.nrows();
    if d_w.len() != n || d_h.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::Estimation("participation vectors, weights and design differ in length".into()));
    }
    let w: Vec<f64> = weights.map_or_else(|| vec![1.0; n], <[f64]>::to_vec);
    let mut cells = [0usize; 4];
    for i in (0..n).filter(|&i| w[i] > 0.0) {
        cells[(d_w[i] as usize) * 2 + d_h[i] as usize] += 1;
    }
    if let Some(empty) = cells.iter().position(|&c| c == 0) {
        return Err(Error::Estimation(format!(
            "participation cell (d_w={}, d_h={}) is empty",
            empty / 2,
            empty % 2
        )));
    }
    if let Some(r) = opts.fix_rho {
        if !(r.abs() < 1.0) {
            return Err(Error::Domain(format!("fixed rho {r} outside (-1,1)")));
        }
    }
    let k = design.ncols();
    let wsum: f64 = w.iter().sum();
    let start_w = probit_fit(d_w, design, Some(&w))?;
    let start_h = probit_fit(d_h, design, Some(&w))?;
    let mut x0: Vec<f64> = start_w.coefficients.iter().chain(&start_h.coefficients).copied().collect();
    if opts.fix_rho.is_none() {
        x0.push(0.0);
    }
    let np = x0.len();

    let objective = |p: &[f64]| -> Option<(f64, Vec<f64>)> {
        let rho = match opts.fix_rho {
            Some(r) => r,
            None => p[2 * k].tanh(),
        };
        if !(rho.abs() < 1.0 - 1e-12) {
            return None;
        }
        let (gw, gh) = (&p[..k], &p[k..2 * k]);
        let mut f = 0.0;
        let mut g = vec![0.0; np];
        for i in 0..n {
            if w[i] == 0.0 {
                continue;
            }
            let row = design.matrix.row(i);
            let a: f64 = (0..k).map(|j| row[j] * gw[j]).sum();
            let b: f64 = (0..k).map(|j| row[j] * gh[j]).sum();
            let qw = if d_w[i] { 1.0 } else { -1.0 };
            let qh = if d_h[i] { 1.0 } else { -1.0 };
            let (ll, d) = cell_loglik(a, b, rho, qw, qh);
            f -= w[i] * ll;
            for j in 0..k {
                g[j] -= w[i] * d[0] * row[j];
                g[k + j] -= w[i] * d[1] * row[j];
            }
            if opts.fix_rho.is_none() {
                g[2 * k] -= w[i] * d[2] * (1.0 - rho * rho);
            }
        }
        Some((f / wsum, g.into_iter().map(|v| v / wsum).collect()))
    };
    let res = bfgs(objective, &x0, &OptimConfig { max_iter: 200, grad_tol: 1e-6, f_tol: 1e-14 });
    let hess = hessian_from_gradient(|p| objective(p).map(|(_, g)| g), &res.x, 1e-5)
        .ok_or_else(|| Error::Estimation("bivariate probit Hessian failed".into()))?;
    let cov = (hess * wsum)
        .try_inverse()
        .unwrap_or_else(|| DMatrix::from_element(np, np, f64::NAN));
    let se: Vec<f64> = (0..np).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let rho = opts.fix_rho.unwrap_or_else(|| res.x[2 * k].tanh());
    let rho_se = if opts.fix_rho.is_some() { 0.0 } else { (1.0 - rho * rho) * se[2 * k] };
    Ok(BiprobitFit {
        gamma_w: res.x[..k].to_vec(),
        gamma_h: res.x[k..2 * k].to_vec(),
        rho,
        rho_se,
        se_w: se[..k].to_vec(),
        se_h: se[k..2 * k].to_vec(),
        vcov: (0..np).map(|i| (0..np).map(|j| cov[(i, j)]).collect()).collect(),
        loglik: -res.f * wsum,
        converged: res.converged,
        iterations: res.iterations,
    })
}

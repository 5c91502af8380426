use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::Design;
use crate::mvn::{std_normal_cdf, std_normal_pdf};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbitFit {
    /// One coefficient per design column; dropped columns carry 0.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub vcov: Vec<Vec<f64>>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Columns removed because they predicted the outcome perfectly.
    pub dropped: Vec<String>,
}

impl ProbitFit {
    pub fn index(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbitOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for ProbitOptions {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-6 }
    }
}

/// log Φ(t) and the inverse Mills ratio φ(t)/Φ(t), stable in the left tail.
#[inline]
pub(crate) fn log_cdf_and_mills(t: f64) -> (f64, f64) {
    if t > -30.0 {
        let c = std_normal_cdf(t);
        (c.ln(), std_normal_pdf(t) / c)
    } else {
        // asymptotic expansion of the Mills ratio
        let t2 = t * t;
        let r = -t / (1.0 - 1.0 / t2 + 3.0 / (t2 * t2));
        (-0.5 * t2 - (2.0 * std::f64::consts::PI).sqrt().ln() - r.ln(), r)
    }
}

/// Probit maximum likelihood of a binary outcome on a design, by damped Newton
/// with the analytic Hessian.
pub fn probit_fit(indicator: &[bool], design: &Design, weights: Option<&[f64]>) -> Result<ProbitFit> {
    probit_fit_with(indicator, design, weights, &ProbitOptions::default())
}

pub fn probit_fit_with(
    indicator: &[bool],
    design: &Design,
    weights: Option<&[f64]>,
    opts: &ProbitOptions,
) -> Result<ProbitFit> {
    let n = design.nrows();
    if indicator.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::Estimation("outcome, weights and design lengths differ".into()));
    }
    let w_all: Vec<f64> = weights.map_or_else(|| vec![1.0; n], <[f64]>::to_vec);
    let mut active: Vec<bool> = w_all.iter().map(|&w| w > 0.0).collect();
    let ones = (0..n).filter(|&i| active[i] && indicator[i]).count();
    let total = active.iter().filter(|&&a| a).count();
    if ones == 0 || ones == total {
        return Err(Error::Estimation(format!(
            "outcome has no variation ({ones} of {total} equal to one)"
        )));
    }

    // Perfect prediction by a 0/1 column: drop the column and the observations it decides.
    let k_all = design.ncols();
    let mut keep_cols: Vec<usize> = (0..k_all).collect();
    let mut dropped = Vec::new();
    for j in 0..k_all {
        let col = design.matrix.column(j);
        let binary = (0..n).all(|i| col[i] == 0.0 || col[i] == 1.0);
        let has_both = (0..n).any(|i| active[i] && col[i] == 0.0) && (0..n).any(|i| active[i] && col[i] == 1.0);
        if !binary || !has_both {
            continue;
        }
        let (mut y1, mut y0) = (0, 0);
        for i in (0..n).filter(|&i| active[i] && col[i] == 1.0) {
            if indicator[i] {
                y1 += 1;
            } else {
                y0 += 1;
            }
        }
        if y1 == 0 || y0 == 0 {
            warn!(
                "column {} predicts the outcome perfectly; dropped with {} observations",
                design.names[j],
                y1 + y0
            );
            dropped.push(design.names[j].clone());
            keep_cols.retain(|&c| c != j);
            for i in 0..n {
                if col[i] == 1.0 {
                    active[i] = false;
                }
            }
        }
    }
    let rows: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
    let x = DMatrix::from_fn(rows.len(), keep_cols.len(), |i, j| design.matrix[(rows[i], keep_cols[j])]);
    check_rank(&x, &keep_cols.iter().map(|&j| design.names[j].clone()).collect::<Vec<_>>())?;
    let y: Vec<bool> = rows.iter().map(|&i| indicator[i]).collect();
    let w: Vec<f64> = rows.iter().map(|&i| w_all[i]).collect();
    let wsum: f64 = w.iter().sum();

    let k = keep_cols.len();
    let eval = |beta: &DVector<f64>, with_hess: bool| -> (f64, DVector<f64>, DMatrix<f64>) {
        let xb = &x * beta;
        let mut ll = 0.0;
        let mut g = DVector::zeros(k);
        let mut h = DMatrix::zeros(if with_hess { k } else { 0 }, if with_hess { k } else { 0 });
        for i in 0..x.nrows() {
            let q = if y[i] { 1.0 } else { -1.0 };
            let (lc, mills) = log_cdf_and_mills(q * xb[i]);
            ll += w[i] * lc;
            let lam = q * mills;
            let row = x.row(i);
            for a in 0..k {
                g[a] += w[i] * lam * row[a];
            }
            if with_hess {
                let c = w[i] * lam * (lam + xb[i]);
                for a in 0..k {
                    for b in 0..=a {
                        h[(a, b)] -= c * row[a] * row[b];
                    }
                }
            }
        }
        if with_hess {
            for a in 0..k {
                for b in 0..a {
                    h[(b, a)] = h[(a, b)];
                }
            }
        }
        (ll, g, h)
    };

    let mut beta = DVector::zeros(k);
    let (mut ll, mut g, mut h) = eval(&beta, true);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let Some(step) = (-h.clone()).cholesky().map(|c| c.solve(&g)) else {
            return Err(Error::Estimation("probit Hessian is not negative definite".into()));
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..50 {
            let cand = &beta + &step * t;
            let (lc, gc, hc) = eval(&cand, true);
            if lc.is_finite() && lc >= ll - 1e-12 * ll.abs() {
                beta = cand;
                ll = lc;
                g = gc;
                h = hc;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        let gnorm = g.amax() / wsum;
        if gnorm <= opts.grad_tol && (step.amax() * t < 1e-10 || gnorm < 1e-13) {
            converged = true;
            break;
        }
        if !improved {
            converged = gnorm <= opts.grad_tol;
            break;
        }
    }
    if !converged {
        converged = g.amax() / wsum <= opts.grad_tol;
    }
    let info = -h;
    let cov = info
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Estimation("singular probit information matrix".into()))?;

    let mut coefficients = vec![0.0; k_all];
    let mut std_errors = vec![f64::NAN; k_all];
    let mut vcov = vec![vec![0.0; k_all]; k_all];
    for (a, &ja) in keep_cols.iter().enumerate() {
        coefficients[ja] = beta[a];
        std_errors[ja] = cov[(a, a)].sqrt();
        for (b, &jb) in keep_cols.iter().enumerate() {
            vcov[ja][jb] = cov[(a, b)];
        }
    }
    Ok(ProbitFit { coefficients, std_errors, vcov, loglik: ll, converged, iterations, dropped })
}

/// Rank check by sequential Gram–Schmidt; the first column in the span of the
/// previous ones is reported by name.
pub(crate) fn check_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..x.ncols() {
        let col: DVector<f64> = x.column(j).into_owned();
        let norm0 = col.norm();
        let mut r = col;
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&r);
                r -= b * c;
            }
        }
        let nr = r.norm();
        if norm0 == 0.0 || nr <= 1e-9 * norm0.max(1.0) {
            return Err(Error::Estimation(format!(
                "design is rank deficient: column {} is collinear with earlier columns",
                names[j]
            )));
        }
        basis.push(r / nr);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvn::std_normal_quantile;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn intercept_only_half() {
        let y: Vec<bool> = (0..1000).map(|i| i % 2 == 0).collect();
        let fit = probit_fit(&y, &Design::intercept(1000), None).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-8);
        assert!(fit.converged);
    }

    #[test]
    fn intercept_only_closed_form() {
        let n = 200_000;
        let ones = 168_269; // 0.841345 * n
        let y: Vec<bool> = (0..n).map(|i| i < ones).collect();
        let fit = probit_fit(&y, &Design::intercept(n), None).unwrap();
        let want = std_normal_quantile(0.841345).unwrap();
        assert!((fit.coefficients[0] - want).abs() < 1e-6);
        assert!((fit.coefficients[0] - 1.0).abs() < 2e-6);
    }

    #[test]
    fn recovers_dgp_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 20_000;
        let beta = [0.5, -1.0];
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let x: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            rows.push(vec![1.0, x]);
            y.push(e <= beta[0] + beta[1] * x);
        }
        let fit = probit_fit(&y, &Design::from_rows(&rows, None).unwrap(), None).unwrap();
        for j in 0..2 {
            assert!((fit.coefficients[j] - beta[j]).abs() <= 3.0 * fit.std_errors[j]);
        }
    }

    #[test]
    fn rescaling_a_covariate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 3000;
        let (mut r1, mut r2, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            let x: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            r1.push(vec![1.0, x]);
            r2.push(vec![1.0, 4.0 * x]);
            y.push(e <= 0.2 + 0.7 * x);
        }
        let a = probit_fit(&y, &Design::from_rows(&r1, None).unwrap(), None).unwrap();
        let b = probit_fit(&y, &Design::from_rows(&r2, None).unwrap(), None).unwrap();
        assert!((a.coefficients[1] / 4.0 - b.coefficients[1]).abs() < 1e-8);
        assert!((a.loglik - b.loglik).abs() < 1e-8);
    }

    #[test]
    fn degenerate_inputs() {
        let y = vec![true; 10];
        assert!(probit_fit(&y, &Design::intercept(10), None).is_err());
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64, 2.0 * i as f64]).collect();
        let y: Vec<bool> = (0..10).map(|i| i % 3 == 0).collect();
        let err = probit_fit(&y, &Design::from_rows(&rows, None).unwrap(), None).unwrap_err();
        assert!(err.to_string().contains("x2"), "{err}");
    }

    #[test]
    fn perfect_predictor_dropped() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![1.0, if i < 10 { 1.0 } else { 0.0 }, (i % 7) as f64])
            .collect();
        let y: Vec<bool> = (0..40).map(|i| i < 10 || i % 3 == 0).collect();
        let d = Design::from_rows(&rows, Some(vec!["const".into(), "kids".into(), "age".into()])).unwrap();
        let fit = probit_fit(&y, &d, None).unwrap();
        assert_eq!(fit.dropped, vec!["kids".to_string()]);
        assert_eq!(fit.coefficients[1], 0.0);
    }
}

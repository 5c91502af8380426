//! Small smooth optimizers shared by the likelihood fits.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub max_iter: usize,
    /// Convergence threshold on the sup-norm of the gradient.
    pub grad_tol: f64,
    /// Relative objective change treated as stagnation.
    pub f_tol: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-6, f_tol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl OptimResult {
    pub fn grad_norm(&self) -> f64 {
        sup_norm(&self.grad)
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// BFGS minimization with a backtracking Armijo line search.
///
/// `f_grad` returns `None` (or a non-finite value) outside the feasible region;
/// the line search then shrinks the step.
pub fn bfgs<F>(mut f_grad: F, x0: &[f64], cfg: &OptimConfig) -> OptimResult
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let Some((mut f, g0)) = f_grad(x.as_slice()).filter(|(f, _)| f.is_finite()) else {
        return OptimResult { x: x0.to_vec(), f: f64::INFINITY, grad: vec![f64::NAN; n], iterations: 0, converged: false };
    };
    let mut g = DVector::from_vec(g0);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut stalls = 0;
    for it in 0..cfg.max_iter {
        if sup_norm(g.as_slice()) <= cfg.grad_tol {
            return done(x, f, g, it, true);
        }
        let mut dir = -(&h * &g);
        let mut slope = dir.dot(&g);
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = dir.dot(&g);
        }
        let mut step = 1.0;
        if first {
            // keep the first trial step at unit length in parameter space
            let len = dir.norm();
            if len > 1.0 {
                step = 1.0 / len;
            }
        }
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + &dir * step;
            if let Some((ft, gt)) = f_grad(trial.as_slice()) {
                if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                    accepted = Some((trial, ft, DVector::from_vec(gt)));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            let ok = sup_norm(g.as_slice()) <= 10.0 * cfg.grad_tol;
            return done(x, f, g, it, ok);
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if first {
                h *= sy / y.dot(&y);
                first = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        let rel = (f - fn_).abs() / (1.0 + f.abs());
        x = xn;
        f = fn_;
        g = gn;
        if rel <= cfg.f_tol {
            stalls += 1;
            if stalls >= 3 {
                let ok = sup_norm(g.as_slice()) <= 10.0 * cfg.grad_tol;
                return done(x, f, g, it + 1, ok);
            }
        } else {
            stalls = 0;
        }
    }
    let ok = sup_norm(g.as_slice()) <= cfg.grad_tol;
    done(x, f, g, cfg.max_iter, ok)
}

fn done(x: DVector<f64>, f: f64, g: DVector<f64>, iterations: usize, converged: bool) -> OptimResult {
    OptimResult { x: x.as_slice().to_vec(), f, grad: g.as_slice().to_vec(), iterations, converged }
}

/// Symmetrized Hessian by central differences of an analytic gradient.
pub fn hessian_from_gradient<G>(mut grad: G, x: &[f64], rel_step: f64) -> Option<DMatrix<f64>>
where
    G: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let step = rel_step * (1.0 + x[j].abs());
        xp[j] = x[j] + step;
        let gp = grad(&xp)?;
        xp[j] = x[j] - step;
        let gm = grad(&xp)?;
        xp[j] = x[j];
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    Some((&h + h.transpose()) * 0.5)
}

/// Brent's root finder on a bracketing interval.
pub fn brent_root<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64, max_iter: usize) -> Option<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return None;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Some(b)
}

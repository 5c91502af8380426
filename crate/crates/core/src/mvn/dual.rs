//! Forward-mode dual numbers with a fixed number of partials.
//!
//! The GHK recursion is written once, generic over [`Real`], and evaluated either
//! on plain `f64` or on [`Dual<N>`] to carry exact derivatives of the simulated
//! probability with respect to integration limits and correlation entries.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::normal::{quantile_unchecked, std_normal_cdf, std_normal_pdf};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Mul<f64, Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sqrt(self) -> Self;
    /// Φ(self).
    fn ncdf(self) -> Self;
    /// Φ⁻¹(u · self) for a fixed u; the argument is clamped away from 0 and 1.
    fn truncated_draw(self, u: f64) -> Self;
}

const TINY: f64 = 1e-300;

#[inline]
fn clamp_open(p: f64) -> f64 {
    p.clamp(TINY, 1.0 - f64::EPSILON / 2.0)
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn ncdf(self) -> Self {
        std_normal_cdf(self)
    }
    #[inline]
    fn truncated_draw(self, u: f64) -> Self {
        quantile_unchecked(clamp_open(u * self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    /// The `i`-th independent variable with value `v`.
    pub fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; N];
        d[i] = 1.0;
        Self { v, d }
    }

    #[inline]
    fn chain(&self, v: f64, slope: f64) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x *= slope;
        }
        Self { v, d }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d.iter()) {
            *a += b;
        }
        Self { v: self.v + o.v, d }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d.iter()) {
            *a -= b;
        }
        Self { v: self.v - o.v, d }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Self { v: self.v * o.v, d }
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, s: f64) -> Self {
        self.chain(self.v * s, s)
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - q * o.d[i]) * inv;
        }
        Self { v: q, d }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.chain(-self.v, -1.0)
    }
}

impl<const N: usize> Real for Dual<N> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self { v, d: [0.0; N] }
    }
    #[inline]
    fn value(&self) -> f64 {
        self.v
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    #[inline]
    fn ncdf(self) -> Self {
        if !self.v.is_finite() {
            return Self::cst(std_normal_cdf(self.v));
        }
        self.chain(std_normal_cdf(self.v), std_normal_pdf(self.v))
    }
    #[inline]
    fn truncated_draw(self, u: f64) -> Self {
        let p = clamp_open(u * self.v);
        let e = quantile_unchecked(p);
        let dens = std_normal_pdf(e);
        if dens < TINY {
            return Self::cst(e);
        }
        self.chain(e, u / dens)
    }
}

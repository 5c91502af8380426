//! Deterministic bivariate normal CDF and density.
//!
//! The CDF follows Genz's BVNU routine (Drezner–Wesolowsky with Gauss–Legendre
//! quadrature and a series for |ρ| ≥ 0.925), accurate to about 1e-15.

use super::normal::{std_normal_cdf, TWO_PI};
use crate::{Error, Result};

const GL_W: [&[f64]; 3] = [
    &[0.171_324_492_379_170_5, 0.360_761_573_048_138_4, 0.467_913_934_572_690_4],
    &[
        0.047_175_336_386_511_77,
        0.106_939_325_995_318_3,
        0.160_078_328_543_346_4,
        0.203_167_426_723_065_9,
        0.233_492_536_538_354_7,
        0.249_147_045_813_402_9,
    ],
    &[
        0.017_614_007_139_152_12,
        0.040_601_429_800_386_94,
        0.062_672_048_334_109_06,
        0.083_276_741_576_704_75,
        0.101_930_119_817_240_4,
        0.118_194_531_961_518_4,
        0.131_688_638_449_176_6,
        0.142_096_109_318_382_1,
        0.149_172_986_472_603_7,
        0.152_753_387_130_725_9,
    ],
];

const GL_X: [&[f64]; 3] = [
    &[-0.932_469_514_203_152_2, -0.661_209_386_466_264_7, -0.238_619_186_083_197],
    &[
        -0.981_560_634_246_719_1,
        -0.904_117_256_370_475,
        -0.769_902_674_194_305,
        -0.587_317_954_286_617_1,
        -0.367_831_498_998_180_2,
        -0.125_233_408_511_469_2,
    ],
    &[
        -0.993_128_599_185_094_9,
        -0.963_971_927_277_913_8,
        -0.912_234_428_251_325_9,
        -0.839_116_971_822_218_8,
        -0.746_331_906_460_150_8,
        -0.636_053_680_726_515,
        -0.510_867_001_950_827_1,
        -0.373_706_088_715_419_6,
        -0.227_785_851_141_645_1,
        -0.076_526_521_133_497_33,
    ],
];

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_nan() || rho.abs() >= 1.0 {
        return Err(Error::Domain(format!(
            "bivariate normal needs |rho| < 1, got {rho}"
        )));
    }
    Ok(())
}

/// Φ₂(x1, x2; ρ) = P(X1 ≤ x1, X2 ≤ x2) for a standard bivariate normal.
pub fn bvn_cdf(x1: f64, x2: f64, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok(bvn_cdf_unchecked(x1, x2, rho))
}

pub(crate) fn bvn_cdf_unchecked(x1: f64, x2: f64, rho: f64) -> f64 {
    if x1 == f64::NEG_INFINITY || x2 == f64::NEG_INFINITY {
        return 0.0;
    }
    if x1 == f64::INFINITY {
        return std_normal_cdf(x2);
    }
    if x2 == f64::INFINITY {
        return std_normal_cdf(x1);
    }
    bvnu(-x1, -x2, rho).clamp(0.0, 1.0)
}

/// Upper orthant P(X1 > h, X2 > k).
fn bvnu(h: f64, k: f64, r: f64) -> f64 {
    let ng = if r.abs() < 0.3 {
        0
    } else if r.abs() < 0.75 {
        1
    } else {
        2
    };
    let (w, x) = (GL_W[ng], GL_X[ng]);
    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for (wi, xi) in w.iter().zip(x) {
            let sn = (asr * (xi + 1.0) / 2.0).sin();
            bvn += wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            let sn = (asr * (1.0 - xi) / 2.0).sin();
            bvn += wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        return bvn * asr / (2.0 * TWO_PI) + std_normal_cdf(-h) * std_normal_cdf(-k);
    }
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let a_s = (1.0 - r) * (1.0 + r);
        let mut a = a_s.sqrt();
        let bs = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        bvn = a
            * (-(bs / a_s + hk) / 2.0).exp()
            * (1.0 - c * (bs - a_s) * (1.0 - d * bs / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
        if hk > -160.0 {
            let b = bs.sqrt();
            bvn -= (-hk / 2.0).exp()
                * TWO_PI.sqrt()
                * std_normal_cdf(-b / a)
                * b
                * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a /= 2.0;
        for (wi, xi) in w.iter().zip(x) {
            for s in [1.0, -1.0] {
                let xs = (a * (s * xi + 1.0)).powi(2);
                let rs = (1.0 - xs).sqrt();
                bvn += a
                    * wi
                    * (-(bs / xs + hk) / 2.0).exp()
                    * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                        - (1.0 + c * xs * (1.0 + d * xs)));
            }
        }
        bvn = -bvn / TWO_PI;
    }
    if r > 0.0 {
        bvn += std_normal_cdf(-h.max(k));
    } else {
        bvn = -bvn;
        if k > h {
            bvn += std_normal_cdf(k) - std_normal_cdf(h);
        }
    }
    bvn
}

/// Standard bivariate normal density φ₂(x1, x2; ρ).
///
/// This is also ∂Φ₂/∂ρ.
pub fn bvn_pdf(x1: f64, x2: f64, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok(bvn_pdf_unchecked(x1, x2, rho))
}

pub(crate) fn bvn_pdf_unchecked(x1: f64, x2: f64, rho: f64) -> f64 {
    if !x1.is_finite() || !x2.is_finite() {
        return 0.0;
    }
    let om = 1.0 - rho * rho;
    let q = (x1 * x1 - 2.0 * rho * x1 * x2 + x2 * x2) / om;
    (-0.5 * q).exp() / (TWO_PI * om.sqrt())
}

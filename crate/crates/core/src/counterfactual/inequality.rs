use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::engine::{Engine, MarginalCurve, Spouse};
use super::sorting::SortingTable;
use crate::distreg::sample_quantile;
use crate::mvn::{std_normal_cdf, std_normal_quantile};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioConfig {
    pub upper: f64,
    pub lower: f64,
    /// Simulated couples.
    pub couples: usize,
    pub seed: u64,
}

impl Default for RatioConfig {
    fn default() -> Self {
        Self { upper: 0.8, lower: 0.2, couples: 100_000, seed: 0 }
    }
}

impl RatioConfig {
    fn check(&self) -> Result<()> {
        if !(0.0 < self.lower && self.lower < self.upper && self.upper < 1.0) {
            return Err(Error::Spec(format!("need 0 < lower < upper < 1, got {} and {}", self.lower, self.upper)));
        }
        if self.couples < 100 {
            return Err(Error::Spec("at least 100 couples are needed for a quantile ratio".into()));
        }
        Ok(())
    }
}

/// Quantile ratio of household (wife + husband) earnings, with the same
/// ratio after pairing spouses at random.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InequalityRatio {
    pub ratio: f64,
    pub random_sorting: f64,
    pub upper_value: f64,
    pub lower_value: f64,
}

fn ratio_of(sums: &mut [f64], cfg: &RatioConfig) -> (f64, f64, f64) {
    sums.sort_by(f64::total_cmp);
    let (hi, lo) = (sample_quantile(sums, cfg.upper), sample_quantile(sums, cfg.lower));
    (hi / lo, hi, lo)
}

/// Ratio on observed couples; the benchmark permutes husbands.
pub fn sample_inequality_ratio(y_w: &[f64], y_h: &[f64], cfg: &RatioConfig) -> Result<InequalityRatio> {
    cfg.check()?;
    if y_w.len() != y_h.len() || y_w.len() < 100 {
        return Err(Error::Domain("need at least 100 couples with both wages".into()));
    }
    let mut sums: Vec<f64> = y_w.iter().zip(y_h).map(|(a, b)| a + b).collect();
    let (ratio, upper_value, lower_value) = ratio_of(&mut sums, cfg);
    let mut perm = y_h.to_vec();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut rand_sums: Vec<f64> = y_w.iter().zip(&perm).map(|(a, b)| a + b).collect();
    Ok(InequalityRatio { ratio, random_sorting: ratio_of(&mut rand_sums, cfg).0, upper_value, lower_value })
}

/// Inverse of a tabulated, nondecreasing CDF by linear interpolation.
pub(crate) fn invert(curve: &MarginalCurve, u: f64) -> f64 {
    let k = curve.cdf.partition_point(|&f| f < u);
    if k == 0 {
        return curve.y[0];
    }
    if k == curve.cdf.len() {
        return curve.y[k - 1];
    }
    let (f0, f1) = (curve.cdf[k - 1], curve.cdf[k]);
    let t = if f1 > f0 { (u - f0) / (f1 - f0) } else { 0.0 };
    curve.y[k - 1] + t * (curve.y[k] - curve.y[k - 1])
}

/// Draws the husband's normal score given the wife's, from a bivariate normal
/// with correlation `rho` truncated to the band (lo, hi] of uniform ranks.
fn conditional_score(x_w: f64, rho: f64, lo: f64, hi: f64, u: f64) -> f64 {
    let s = (1.0 - rho * rho).sqrt();
    let edge = |p: f64| {
        if p <= 0.0 {
            0.0
        } else if p >= 1.0 {
            1.0
        } else {
            std_normal_cdf((quantile(p) - rho * x_w) / s)
        }
    };
    let (a, b) = (edge(lo), edge(hi));
    rho * x_w + s * quantile(a + u * (b - a))
}

fn quantile(p: f64) -> f64 {
    std_normal_quantile(p.clamp(1e-15, 1.0 - 1e-15)).unwrap_or(0.0)
}

/// Ratio under a counterfactual: couples are drawn from the decile-pair
/// probabilities of the counterfactual table; within a decile pair the ranks
/// follow a Gaussian copula with the local wage correlation at the pair's
/// midpoint; wages come from the inverted counterfactual marginals.
pub fn inequality_ratio(engine: &Engine<'_>, cfg: &RatioConfig) -> Result<InequalityRatio> {
    inequality_ratio_with(engine, &engine.sorting_table()?.table, cfg)
}

/// As [`inequality_ratio`], reusing the engine's already simulated table.
pub fn inequality_ratio_with(engine: &Engine<'_>, table: &SortingTable, cfg: &RatioConfig) -> Result<InequalityRatio> {
    cfg.check()?;
    let g = table.size();
    let cells: Vec<f64> = table.cells.iter().flatten().copied().collect();
    let total: f64 = cells.iter().sum();
    let mut cum = Vec::with_capacity(cells.len());
    let mut acc = 0.0;
    for c in &cells {
        acc += c / total;
        cum.push(acc);
    }
    let (cw, ch) = (engine.marginal_curve(Spouse::Wife), engine.marginal_curve(Spouse::Husband));
    let width = 1.0 / g as f64;
    let mid = |c: &MarginalCurve, k: usize| invert(c, (k as f64 + 0.5) * width);
    let rho: Vec<f64> = (0..g * g)
        .map(|c| engine.local_params(mid(&cw, c / g), mid(&ch, c % g)).rho_ywyh.clamp(-0.999, 0.999))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut yw, mut yh) = (Vec::with_capacity(cfg.couples), Vec::with_capacity(cfg.couples));
    for _ in 0..cfg.couples {
        let pick: f64 = rng.random();
        let c = cum.partition_point(|&v| v < pick).min(cells.len() - 1);
        let (i, j) = (c / g, c % g);
        let uw = (i as f64 + rng.random::<f64>()) * width;
        let xh = conditional_score(quantile(uw), rho[c], j as f64 * width, (j + 1) as f64 * width, rng.random());
        let uh = std_normal_cdf(xh).clamp(j as f64 * width, (j + 1) as f64 * width);
        yw.push(invert(&cw, uw));
        yh.push(invert(&ch, uh));
    }
    let mut sums: Vec<f64> = yw.iter().zip(&yh).map(|(a, b)| a + b).collect();
    let (ratio, upper_value, lower_value) = ratio_of(&mut sums, cfg);
    yh.shuffle(&mut rng);
    let mut rand_sums: Vec<f64> = yw.iter().zip(&yh).map(|(a, b)| a + b).collect();
    Ok(InequalityRatio { ratio, random_sorting: ratio_of(&mut rand_sums, cfg).0, upper_value, lower_value })
}

/// Gaussian kernel density estimate with Silverman's rule-of-thumb bandwidth.
pub fn kde(values: &[f64], points: usize) -> Result<Vec<(f64, f64)>> {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.len() < 2 || points < 2 {
        return Err(Error::Domain("a density estimate needs two finite values and two points".into()));
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut s = v.clone();
    s.sort_by(f64::total_cmp);
    let iqr = sample_quantile(&s, 0.75) - sample_quantile(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = if spread > 0.0 { 0.9 * spread * n.powf(-0.2) } else { 1e-3 };
    let (lo, hi) = (s[0] - 3.0 * h, s[s.len() - 1] + 3.0 * h);
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok((0..points)
        .map(|k| {
            let x = lo + (hi - lo) * k as f64 / (points - 1) as f64;
            let d = v.iter().map(|&y| (-0.5 * ((x - y) / h).powi(2)).exp()).sum::<f64>() * norm;
            (x, d)
        })
        .collect())
}

//! Synthetic couples from the exact latent tetravariate model, and crude Monte
//! Carlo oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distreg::{BiprobitFit, ThresholdGrid};
use crate::mvn::{mix_seed, std_normal_cdf, CorrelationMatrix, GhkEstimate, MAX_DIM};
use crate::selection::{
    assemble_sigma, CellFit, Composition, Household, LocalParams, ModelGridFit, RhoName, SecondStageConfig,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Enters wages and participation.
    X,
    /// Excluded from wages; shifts participation only.
    ZOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum CovariateLaw {
    Bernoulli { p: f64 },
    Normal { mean: f64, sd: f64 },
    /// Values 0, 1, …, K−1 with the given probabilities.
    Categorical { probs: Vec<f64> },
}

/// A covariate driven by a Gaussian latent with loading `loading` on one
/// common factor, which correlates covariates across spouses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    #[serde(flatten)]
    pub law: CovariateLaw,
    #[serde(default)]
    pub loading: f64,
    pub role: Role,
}

/// ln Y = x'α + σ ε, so that P(Y ≤ y | x) = Φ((ln y − x'α)/σ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WageModel {
    pub alpha: Vec<f64>,
    pub sigma: f64,
}

impl WageModel {
    /// Distribution-regression coefficients β(y) of the location model.
    pub fn beta(&self, y: f64) -> Vec<f64> {
        let mut b: Vec<f64> = self.alpha.iter().map(|a| -a / self.sigma).collect();
        b[0] = (y.ln() - self.alpha[0]) / self.sigma;
        b
    }
}

/// Constant local correlations, in the orientation of [`LocalParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RhoSet {
    pub rho_dwdh: f64,
    pub rho_dwyw: f64,
    pub rho_dhyh: f64,
    pub rho_dwyh: f64,
    pub rho_dhyw: f64,
    pub rho_ywyh: f64,
}

impl RhoSet {
    pub fn get(&self, r: RhoName) -> f64 {
        match r {
            RhoName::DwDh => self.rho_dwdh,
            RhoName::DwYw => self.rho_dwyw,
            RhoName::DhYh => self.rho_dhyh,
            RhoName::DwYh => self.rho_dwyh,
            RhoName::DhYw => self.rho_dhyw,
            RhoName::YwYh => self.rho_ywyh,
        }
    }

    pub fn set(&mut self, r: RhoName, v: f64) {
        *match r {
            RhoName::DwDh => &mut self.rho_dwdh,
            RhoName::DwYw => &mut self.rho_dwyw,
            RhoName::DhYh => &mut self.rho_dhyh,
            RhoName::DwYh => &mut self.rho_dwyh,
            RhoName::DhYw => &mut self.rho_dhyw,
            RhoName::YwYh => &mut self.rho_ywyh,
        } = v;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    #[serde(default)]
    pub period: String,
    pub covariates: Vec<Covariate>,
    /// Participation coefficients on (const, X covariates, Z-only covariates).
    pub gamma_w: Vec<f64>,
    pub gamma_h: Vec<f64>,
    /// Wage coefficients on (const, X covariates).
    pub wage_w: WageModel,
    pub wage_h: WageModel,
    pub rho: RhoSet,
    pub n: usize,
    pub seed: u64,
}

/// Latent draws behind one simulated household.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub v: [f64; 4],
    pub y_w_star: f64,
    pub y_h_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedData {
    pub households: Vec<Household>,
    pub latent: Vec<Latent>,
    pub x_names: Vec<String>,
    pub z_only_names: Vec<String>,
}

impl DgpSpec {
    pub fn x_names(&self) -> Vec<String> {
        self.names(Role::X)
    }

    pub fn z_only_names(&self) -> Vec<String> {
        self.names(Role::ZOnly)
    }

    fn names(&self, role: Role) -> Vec<String> {
        self.covariates.iter().filter(|c| c.role == role).map(|c| c.name.clone()).collect()
    }

    pub fn kx(&self) -> usize {
        1 + self.covariates.iter().filter(|c| c.role == Role::X).count()
    }

    pub fn kz(&self) -> usize {
        1 + self.covariates.len()
    }

    /// True local parameters at a pair of wage levels.
    pub fn truth(&self, y_w: f64, y_h: f64) -> LocalParams {
        let mut p = LocalParams::independent(self.wage_w.beta(y_w), self.wage_h.beta(y_h), (0, 0));
        for r in RhoName::ALL {
            p.set_rho(r, self.rho.get(r));
        }
        p
    }

    pub fn sigma(&self) -> Result<CorrelationMatrix> {
        let s = assemble_sigma(&self.truth(1.0, 1.0))?;
        if s.projected {
            return Err(Error::Spec("correlations of the data generating process are not positive definite".into()));
        }
        Ok(s.corr)
    }

    /// Full validation, including relevance of the excluded covariates.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        let (kx, kz) = (self.kx(), self.kz());
        let z_only: Vec<usize> = (kx..kz).collect();
        if !z_only.is_empty() && z_only.iter().all(|&k| self.gamma_w[k] == 0.0 && self.gamma_h[k] == 0.0) {
            return Err(Error::Spec("excluded covariates do not shift participation".into()));
        }
        Ok(())
    }

    /// Dimensions, laws and positive definiteness; relevance is not required.
    pub fn validate_structure(&self) -> Result<()> {
        let (kx, kz) = (self.kx(), self.kz());
        if self.gamma_w.len() != kz || self.gamma_h.len() != kz {
            return Err(Error::Spec(format!("participation coefficients need {kz} entries")));
        }
        if self.wage_w.alpha.len() != kx || self.wage_h.alpha.len() != kx {
            return Err(Error::Spec(format!("wage coefficients need {kx} entries")));
        }
        if !(self.wage_w.sigma > 0.0 && self.wage_h.sigma > 0.0) {
            return Err(Error::Spec("wage scale must be positive".into()));
        }
        for c in &self.covariates {
            if !(c.loading.abs() < 1.0) {
                return Err(Error::Spec(format!("loading of {} must lie in (-1,1)", c.name)));
            }
            match c.law {
                CovariateLaw::Bernoulli { p } if !(p > 0.0 && p < 1.0) => {
                    return Err(Error::Spec(format!("{}: probability outside (0,1)", c.name)))
                }
                CovariateLaw::Normal { sd, .. } if !(sd > 0.0) => {
                    return Err(Error::Spec(format!("{}: non-positive sd", c.name)))
                }
                CovariateLaw::Categorical { ref probs }
                    if probs.is_empty()
                        || probs.iter().any(|&p| !(p >= 0.0))
                        || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 =>
                {
                    return Err(Error::Spec(format!("{}: category probabilities must sum to one", c.name)))
                }
                _ => {}
            }
        }
        self.sigma().map(|_| ())
    }

    fn draw_covariates(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let f: f64 = rng.sample(StandardNormal);
        let mut vals = Vec::with_capacity(self.covariates.len());
        for c in &self.covariates {
            let e: f64 = rng.sample(StandardNormal);
            let g = c.loading * f + (1.0 - c.loading * c.loading).sqrt() * e;
            vals.push(match c.law {
                CovariateLaw::Bernoulli { p } => f64::from(u8::from(std_normal_cdf(g) < p)),
                CovariateLaw::Normal { mean, sd } => mean + sd * g,
                CovariateLaw::Categorical { ref probs } => {
                    let u = std_normal_cdf(g);
                    let mut acc = 0.0;
                    let mut k = probs.len() - 1;
                    for (i, p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            k = i;
                            break;
                        }
                    }
                    k as f64
                }
            });
        }
        let mut x = vec![1.0];
        let mut z_only = Vec::new();
        for (c, v) in self.covariates.iter().zip(vals) {
            match c.role {
                Role::X => x.push(v),
                Role::ZOnly => z_only.push(v),
            }
        }
        let mut z = x.clone();
        z.extend(z_only);
        (x, z)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const CHUNK: usize = 4096;

/// Draws households and applies the observation rule; latent draws are kept.
///
/// Excluded covariates without effect on participation are allowed here so that
/// non-identified designs can be simulated.
pub fn simulate(spec: &DgpSpec) -> Result<SimulatedData> {
    spec.validate_structure()?;
    let chol = spec.sigma()?.cholesky()?;
    let chunks: Vec<Vec<(Household, Latent)>> = (0..spec.n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, c as u64));
            let len = CHUNK.min(spec.n - c * CHUNK);
            (0..len)
                .map(|_| {
                    let (x, z) = spec.draw_covariates(&mut rng);
                    let e: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
                    let v: [f64; 4] = std::array::from_fn(|i| (0..=i).map(|j| chol[i][j] * e[j]).sum());
                    let d_w = v[0] <= dot(&z, &spec.gamma_w);
                    let d_h = v[1] <= dot(&z, &spec.gamma_h);
                    let yw = (dot(&x, &spec.wage_w.alpha) + spec.wage_w.sigma * v[2]).exp();
                    let yh = (dot(&x, &spec.wage_h.alpha) + spec.wage_h.sigma * v[3]).exp();
                    let both = d_w && d_h;
                    (
                        Household {
                            d_w,
                            d_h,
                            y_w: both.then_some(yw),
                            y_h: both.then_some(yh),
                            x_row: x,
                            z_row: z,
                            weight: 1.0,
                        },
                        Latent { v, y_w_star: yw, y_h_star: yh },
                    )
                })
                .collect()
        })
        .collect();
    let (households, latent) = chunks.into_iter().flatten().unzip();
    Ok(SimulatedData { households, latent, x_names: spec.x_names(), z_only_names: spec.z_only_names() })
}

/// A grid fit filled with the true parameters, for oracle comparisons.
pub fn truth_grid_fit(spec: &DgpSpec, grid: &ThresholdGrid, data: &[Household]) -> Result<ModelGridFit> {
    spec.validate()?;
    let g = grid.size();
    let kx = spec.kx();
    let zero = |n: usize| vec![0.0; n];
    let mut cells = Vec::with_capacity(g * g);
    for i in 0..g {
        for j in 0..g {
            let mut params = spec.truth(grid.cut_w[i], grid.cut_h[j]);
            params.cell = (i, j);
            let mut se = LocalParams::independent(zero(kx), zero(kx), (i, j));
            se.rho_dwdh = 0.0;
            cells.push(CellFit {
                params,
                se,
                cut_w: grid.cut_w[i],
                cut_h: grid.cut_h[j],
                loglik: f64::NAN,
                converged: true,
                boundary: false,
                iterations: 0,
                grad_norm: 0.0,
                quadrant_weights: [f64::NAN; 4],
                note: Some("true parameters".into()),
            });
        }
    }
    let kz = spec.kz();
    Ok(ModelGridFit {
        period: spec.period.clone(),
        first_stage: BiprobitFit {
            gamma_w: spec.gamma_w.clone(),
            gamma_h: spec.gamma_h.clone(),
            rho: spec.rho.rho_dwdh,
            rho_se: 0.0,
            se_w: zero(kz),
            se_h: zero(kz),
            vcov: Vec::new(),
            loglik: f64::NAN,
            converged: true,
            iterations: 0,
        },
        thresholds: grid.clone(),
        cells,
        composition: Composition::from_households(data),
        config: SecondStageConfig::default(),
        bootstrap: Vec::new(),
        bootstrap_failures: 0,
    })
}

/// Crude Monte Carlo estimate of Φ_N(x; Σ) with its binomial standard error.
pub fn mc_orthant(x: &[f64], corr: &CorrelationMatrix, n_draws: usize, seed: u64) -> Result<GhkEstimate> {
    if n_draws < 10_000 {
        return Err(Error::Domain(format!("crude Monte Carlo needs at least 10^4 draws, got {n_draws}")));
    }
    let p = mc_orthant_batch(&[x.to_vec()], corr, n_draws, seed)?[0];
    Ok(p)
}

/// Crude Monte Carlo for several limit vectors sharing one correlation matrix
/// and one stream of normal draws.
pub fn mc_orthant_batch(limits: &[Vec<f64>], corr: &CorrelationMatrix, n_draws: usize, seed: u64) -> Result<Vec<GhkEstimate>> {
    let dim = corr.dim();
    if limits.iter().any(|x| x.len() != dim) {
        return Err(Error::Domain("limit length differs from the matrix dimension".into()));
    }
    let chol = corr.cholesky()?;
    const BLOCK: usize = 1 << 16;
    let hits: Vec<Vec<u64>> = (0..n_draws.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, b as u64));
            let len = BLOCK.min(n_draws - b * BLOCK);
            let mut h = vec![0u64; limits.len()];
            let mut v = [0.0; MAX_DIM];
            for _ in 0..len {
                let e: [f64; MAX_DIM] = std::array::from_fn(|i| if i < dim { rng.sample(StandardNormal) } else { 0.0 });
                for i in 0..dim {
                    v[i] = (0..=i).map(|j| chol[i][j] * e[j]).sum();
                }
                for (k, x) in limits.iter().enumerate() {
                    if (0..dim).all(|i| v[i] <= x[i]) {
                        h[k] += 1;
                    }
                }
            }
            h
        })
        .collect();
    let n = n_draws as f64;
    Ok((0..limits.len())
        .map(|k| {
            let p = hits.iter().map(|h| h[k]).sum::<u64>() as f64 / n;
            GhkEstimate { prob: p, std_error: (p * (1.0 - p) / n).sqrt() }
        })
        .collect())
}

fn bern(name: &str, p: f64, loading: f64, role: Role) -> Covariate {
    Covariate { name: name.into(), law: CovariateLaw::Bernoulli { p }, loading, role }
}

/// Two synthetic "CPS-like" periods (0 = early, 1 = late) whose headline
/// statistics echo published magnitudes: wage–wage local correlation 0.18 then
/// 0.24 and a wife selection correlation that changes sign between periods.
/// Correlations are given here in the orientation D = 1 ⇔ D* ≤ 0 and converted.
pub fn cps_like(period: usize, n: usize, seed: u64) -> DgpSpec {
    let late = period >= 1;
    let covariates = vec![
        bern("college_w", if late { 0.34 } else { 0.22 }, 0.6, Role::X),
        bern("college_h", if late { 0.33 } else { 0.27 }, 0.6, Role::X),
        bern("south", 0.33, 0.2, Role::X),
        bern("kids", if late { 0.40 } else { 0.48 }, 0.0, Role::ZOnly),
        bern("child_u5", if late { 0.22 } else { 0.26 }, 0.0, Role::ZOnly),
    ];
    // stated in the failure orientation, as such correlations are usually reported
    let failure = RhoSet {
        rho_dwdh: 0.15,
        rho_dwyw: if late { 0.2 } else { -0.3 },
        rho_dhyh: -0.1,
        rho_dwyh: -0.05,
        rho_dhyw: -0.05,
        rho_ywyh: if late { 0.24 } else { 0.18 },
    };
    let mut rho = RhoSet::default();
    for r in RhoName::ALL {
        rho.set(r, r.failure_sign() * failure.get(r));
    }
    DgpSpec {
        period: if late { "late".into() } else { "early".into() },
        covariates,
        gamma_w: vec![if late { 0.55 } else { 0.25 }, 0.35, -0.1, -0.05, -0.45, -0.4],
        gamma_h: vec![1.0, 0.3, 0.25, -0.05, 0.1, -0.1],
        wage_w: WageModel { alpha: vec![2.6, if late { 0.5 } else { 0.4 }, 0.05, -0.1], sigma: 0.5 },
        wage_h: WageModel { alpha: vec![2.9, 0.06, if late { 0.55 } else { 0.45 }, -0.12], sigma: 0.55 },
        rho,
        n,
        seed,
    }
}

/// Design with the correlations of the two-step recovery experiment, given
/// directly in the orientation of [`LocalParams`].
pub fn recovery_dgp(n: usize, seed: u64) -> DgpSpec {
    let mut spec = cps_like(0, n, seed);
    spec.period = "recovery".into();
    spec.rho = RhoSet {
        rho_dwdh: 0.1,
        rho_dwyw: -0.3,
        rho_dhyh: -0.1,
        rho_dwyh: -0.1,
        rho_dhyw: -0.1,
        rho_ywyh: 0.25,
    };
    spec
}

/// Intercept-only wages and one three-valued excluded covariate with strong
/// effects on both spouses' participation.
pub fn identification_dgp(n: usize, seed: u64) -> DgpSpec {
    DgpSpec {
        period: "identification".into(),
        covariates: vec![Covariate {
            name: "z_excl".into(),
            law: CovariateLaw::Categorical { probs: vec![1.0 / 3.0; 3] },
            loading: 0.0,
            role: Role::ZOnly,
        }],
        gamma_w: vec![1.3, -1.3],
        gamma_h: vec![1.3, -1.3],
        wage_w: WageModel { alpha: vec![2.6], sigma: 0.5 },
        wage_h: WageModel { alpha: vec![2.9], sigma: 0.55 },
        rho: RhoSet {
            rho_dwdh: 0.2,
            rho_dwyw: -0.3,
            rho_dhyh: 0.2,
            rho_dwyh: -0.15,
            rho_dhyw: 0.1,
            rho_ywyh: 0.25,
        },
        n,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvn::{bvn_cdf, std_normal_quantile};

    #[test]
    fn presets_are_valid() {
        for p in 0..2 {
            cps_like(p, 10, 1).validate().unwrap();
        }
        recovery_dgp(10, 1).validate().unwrap();
    }

    #[test]
    fn independence_participation_rates() {
        let mut spec = cps_like(0, 200_000, 3);
        spec.rho = RhoSet::default();
        let sim = simulate(&spec).unwrap();
        let n = sim.households.len() as f64;
        let emp = sim.households.iter().filter(|h| h.both_work()).count() as f64 / n;
        let model: f64 = sim
            .households
            .iter()
            .map(|h| std_normal_cdf(dot(&h.z_row, &spec.gamma_w)) * std_normal_cdf(dot(&h.z_row, &spec.gamma_h)))
            .sum::<f64>()
            / n;
        assert!((emp - model).abs() < 3.0 * (model * (1.0 - model) / n).sqrt() + 1e-3);
    }

    #[test]
    fn participation_cells_match_bivariate_normal() {
        let mut spec = cps_like(0, 1_000_000, 4);
        spec.covariates.clear();
        spec.gamma_w = vec![0.4];
        spec.gamma_h = vec![0.9];
        spec.wage_w.alpha.truncate(1);
        spec.wage_h.alpha.truncate(1);
        spec.rho = RhoSet { rho_dwdh: 0.3, ..RhoSet::default() };
        // no excluded covariates: relevance check does not apply
        let sim = simulate(&spec).unwrap();
        let n = sim.households.len() as f64;
        let p11 = bvn_cdf(0.4, 0.9, 0.3).unwrap();
        let pw = std_normal_cdf(0.4);
        let ph = std_normal_cdf(0.9);
        let want = [p11, pw - p11, ph - p11, 1.0 - pw - ph + p11];
        let mut got = [0.0; 4];
        for h in &sim.households {
            got[2 * usize::from(!h.d_w) + usize::from(!h.d_h)] += 1.0 / n;
        }
        for k in 0..4 {
            let se = (want[k] * (1.0 - want[k]) / n).sqrt();
            assert!((got[k] - want[k]).abs() < 3.0 * se, "cell {k}: {} vs {}", got[k], want[k]);
        }
    }

    #[test]
    fn observation_rule_and_latent_marginals() {
        let spec = cps_like(1, 50_000, 5);
        let sim = simulate(&spec).unwrap();
        for (h, l) in sim.households.iter().zip(&sim.latent) {
            h.validate().unwrap();
            if h.both_work() {
                assert_eq!(h.y_w, Some(l.y_w_star));
            }
        }
        // standardized latent log wage is N(0,1): KS against Φ
        let mut u: Vec<f64> = sim
            .households
            .iter()
            .zip(&sim.latent)
            .map(|(h, l)| std_normal_cdf((l.y_w_star.ln() - dot(&h.x_row, &spec.wage_w.alpha)) / spec.wage_w.sigma))
            .collect();
        u.sort_by(f64::total_cmp);
        let n = u.len() as f64;
        let ks = u
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 1.36 / n.sqrt(), "KS {ks}");
    }

    #[test]
    fn selection_shifts_observed_wages_as_implied() {
        // intercept-only wives, no husbands' selection: E[ε | V_D ≤ μ] = −ρ φ(μ)/Φ(μ)
        let mut spec = cps_like(0, 400_000, 6);
        spec.covariates.clear();
        spec.gamma_w = vec![0.2];
        spec.gamma_h = vec![8.0];
        spec.wage_w.alpha.truncate(1);
        spec.wage_h.alpha.truncate(1);
        spec.rho = RhoSet { rho_dwyw: 0.4, ..RhoSet::default() };
        let sim = simulate(&spec).unwrap();
        let sel: Vec<f64> = sim
            .households
            .iter()
            .filter_map(|h| h.y_w)
            .map(|y| (y.ln() - spec.wage_w.alpha[0]) / spec.wage_w.sigma)
            .collect();
        let mean = sel.iter().sum::<f64>() / sel.len() as f64;
        let mu = 0.2;
        let want = -0.4 * crate::mvn::std_normal_pdf(mu) / std_normal_cdf(mu);
        assert!((mean - want).abs() < 4.0 / (sel.len() as f64).sqrt(), "{mean} vs {want}");
        // success orientation: positive ρ_dwyw lowers selected wages; the
        // failure orientation reports it as negative
        assert!(mean < 0.0);
        assert!(spec.truth(1.0, 1.0).failure_orientation().rho_dwyw < 0.0);
    }

    #[test]
    fn relevance_is_required() {
        let mut spec = cps_like(0, 10, 1);
        let kx = spec.kx();
        for k in kx..spec.kz() {
            spec.gamma_w[k] = 0.0;
            spec.gamma_h[k] = 0.0;
        }
        assert!(spec.validate().is_err());
    }

    #[test]
    fn mc_orthant_oracles() {
        let id = CorrelationMatrix::identity(4).unwrap();
        let r = mc_orthant(&[0.0; 4], &id, 200_000, 1).unwrap();
        assert!((r.prob - 0.0625).abs() < 3.0 * r.std_error);
        let c = CorrelationMatrix::from_upper(2, &[0.4]).unwrap();
        let r = mc_orthant(&[0.3, -0.2], &c, 200_000, 2).unwrap();
        assert!((r.prob - bvn_cdf(0.3, -0.2, 0.4).unwrap()).abs() < 3.0 * r.std_error);
        let c = CorrelationMatrix::equicorrelated(3, 0.999).unwrap();
        let r = mc_orthant(&[0.0; 3], &c, 100_000, 3).unwrap();
        assert!((r.prob - 0.5).abs() < 0.02, "{}", r.prob);
        assert!(mc_orthant(&[0.0; 2], &c.select(&[0, 1]).unwrap(), 100, 0).is_err());
    }

    #[test]
    fn location_model_beta() {
        let w = WageModel { alpha: vec![2.0, 0.5], sigma: 0.5 };
        let b = w.beta(2f64.exp());
        assert_eq!(b, vec![0.0, -1.0]);
        let _ = std_normal_quantile(0.5);
    }
}

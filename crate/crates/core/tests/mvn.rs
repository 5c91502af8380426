use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sortsel::datagen::mc_orthant;
use sortsel::mvn::{bvn_cdf, mvn_cdf_drho, mvn_cdf_ghk, CorrelationMatrix, GhkConfig, OrthantQuery};

/// Correlation matrix of A Aᵀ + εI for a Gaussian A.
fn random_corr(rng: &mut impl Rng, dim: usize) -> CorrelationMatrix {
    let a: Vec<Vec<f64>> = (0..dim).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let mut s = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for j in 0..dim {
            s[i][j] = (0..dim).map(|k| a[i][k] * a[j][k]).sum::<f64>() + if i == j { 0.3 } else { 0.0 };
        }
    }
    let d: Vec<f64> = (0..dim).map(|i| s[i][i].sqrt()).collect();
    let rows: Vec<Vec<f64>> = (0..dim).map(|i| (0..dim).map(|j| if i == j { 1.0 } else { s[i][j] / (d[i] * d[j]) }).collect()).collect();
    CorrelationMatrix::from_rows(&rows).unwrap()
}

fn ghk_against_crude_mc(cases: usize, mc_draws: usize) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut hits = 0;
    for k in 0..cases {
        let corr = random_corr(&mut rng, 4);
        let lim: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
        let g = mvn_cdf_ghk(&OrthantQuery::new(lim.clone(), corr.clone(), 4096, k as u64)).unwrap();
        let m = mc_orthant(&lim, &corr, mc_draws, 10_000 + k as u64).unwrap();
        if (g.prob - m.prob).abs() <= 3.0 * g.std_error.hypot(m.std_error) {
            hits += 1;
        }
    }
    (hits, cases)
}

#[test]
fn ghk_agrees_with_crude_monte_carlo_smoke() {
    let (hits, cases) = ghk_against_crude_mc(40, 1_000_000);
    assert!(hits as f64 >= 0.95 * cases as f64, "{hits} of {cases}");
}

#[test]
#[ignore = "two hundred cases at 10^7 crude draws"]
fn ghk_agrees_with_crude_monte_carlo() {
    let (hits, cases) = ghk_against_crude_mc(200, 10_000_000);
    assert!(hits as f64 >= 0.95 * cases as f64, "{hits} of {cases}");
}

#[test]
fn bivariate_ghk_matches_the_analytic_cdf() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..200 {
        let rho = rng.random_range(-0.95..0.95);
        let (a, b) = (rng.random_range(-2.5..2.5), rng.random_range(-2.5..2.5));
        let corr = CorrelationMatrix::from_rows(&[vec![1.0, rho], vec![rho, 1.0]]).unwrap();
        let g = mvn_cdf_ghk(&OrthantQuery::new(vec![a, b], corr, 8192, k)).unwrap();
        let exact = bvn_cdf(a, b, rho).unwrap();
        assert!((g.prob - exact).abs() <= 1e-3, "({a}, {b}; {rho}): {} vs {exact}", g.prob);
    }
}

#[test]
fn correlation_derivative_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    // small derivatives need many draws for a 1% relative comparison
    let cfg = GhkConfig::new(250_000, 3);
    let h = 1e-4;
    for case in 0..50 {
        let dim = 3 + case % 2;
        let corr = random_corr(&mut rng, dim);
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.5)).collect();
        let i = rng.random_range(0..dim);
        let j = (i + 1 + rng.random_range(0..dim - 1)) % dim;
        let d = mvn_cdf_drho(&x, &corr, i, j, &cfg).unwrap().prob;
        assert!(d > 0.0, "case {case}: derivative {d}");
        let bump = |e: f64| {
            let mut rows = corr.rows();
            rows[i][j] += e;
            rows[j][i] += e;
            let c = CorrelationMatrix::from_rows(&rows).unwrap();
            mvn_cdf_ghk(&OrthantQuery::new(x.clone(), c, cfg.draws, cfg.seed)).unwrap().prob
        };
        let fd = (bump(h) - bump(-h)) / (2.0 * h);
        assert!((d - fd).abs() <= 1e-2 * fd.abs(), "case {case} (dim {dim}, ρ{i}{j}): {d} vs {fd}");
    }
}

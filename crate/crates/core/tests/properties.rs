use proptest::prelude::*;
use sortsel::counterfactual::{empirical_sorting_table, kendall_tau, kendall_tau_grouped, Statistic};
use sortsel::distreg::rearrange;
use sortsel::mvn::{bvn_cdf, mvn_cdf_ghk, project_to_pd, std_normal_cdf, CorrelationMatrix, OrthantQuery, PD_EPS};
use sortsel::selection::{LocalParams, RhoName};

/// Random correlation matrices as normalized Gram matrices of random vectors.
fn corr(dim: usize) -> impl Strategy<Value = CorrelationMatrix> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), dim).prop_filter_map("degenerate", move |a| {
        let norm: Vec<f64> = a.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        if norm.iter().any(|&n| n < 0.2) {
            return None;
        }
        let rows: Vec<Vec<f64>> = (0..dim)
            .map(|i| {
                (0..dim)
                    .map(|j| if i == j { 1.0 } else { 0.9 * (0..dim).map(|k| a[i][k] * a[j][k]).sum::<f64>() / (norm[i] * norm[j]) })
                    .collect()
            })
            .collect();
        CorrelationMatrix::from_rows(&rows).ok()
    })
}

fn ghk(lim: &[f64], c: &CorrelationMatrix, seed: u64) -> (f64, f64) {
    let e = mvn_cdf_ghk(&OrthantQuery::new(lim.to_vec(), c.clone(), 2048, seed)).unwrap();
    (e.prob, e.std_error)
}

fn brute_tau(x: &[f64], y: &[f64]) -> f64 {
    let (mut s, mut tx, mut ty) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let a = (x[i] - x[j]).signum() * f64::from(u8::from(x[i] != x[j]));
            let b = (y[i] - y[j]).signum() * f64::from(u8::from(y[i] != y[j]));
            s += a * b;
            tx += a * a;
            ty += b * b;
        }
    }
    s / (tx * ty).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn orthant_probabilities_are_monotone_in_the_limits(
        c in corr(4),
        lim in prop::collection::vec(-2.0f64..2.0, 4),
        k in 0usize..4,
        step in 0.0f64..1.5,
        seed in 0u64..1000,
    ) {
        let (p, sp) = ghk(&lim, &c, seed);
        prop_assert!((0.0..=1.0).contains(&p));
        let mut up = lim.clone();
        up[k] += step;
        let (q, sq) = ghk(&up, &c, seed);
        prop_assert!((0.0..=1.0).contains(&q));
        // the last limit only scales the final factor of every draw; earlier
        // limits also move the truncated draws that later factors condition on
        if k == 3 {
            prop_assert!(q >= p - 1e-12, "{q} < {p}");
        } else {
            prop_assert!(q >= p - 3.0 * sp.hypot(sq), "{q} < {p}");
        }
    }

    #[test]
    fn permuting_dimensions_changes_only_simulation_noise(
        c in corr(4),
        lim in prop::collection::vec(-1.5f64..1.5, 4),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let (p, sp) = ghk(&lim, &c, 1);
        let rows = c.rows();
        let pr: Vec<Vec<f64>> = perm.iter().map(|&i| perm.iter().map(|&j| rows[i][j]).collect()).collect();
        let pl: Vec<f64> = perm.iter().map(|&i| lim[i]).collect();
        let (q, sq) = ghk(&pl, &CorrelationMatrix::from_rows(&pr).unwrap(), 2);
        prop_assert!((p - q).abs() <= 3.0 * sp.hypot(sq) + 1e-9, "{p} vs {q}");
    }

    #[test]
    fn orthant_probability_increases_with_a_correlation(
        c in corr(3),
        lim in prop::collection::vec(-1.5f64..1.5, 3),
        pair in 0usize..3,
    ) {
        let (i, j) = [(0, 1), (0, 2), (1, 2)][pair];
        let bumped = |d: f64| {
            let mut r = c.rows();
            r[i][j] += d;
            r[j][i] += d;
            CorrelationMatrix::from_rows(&r).ok()
        };
        if let (Some(lo), Some(hi)) = (bumped(-0.05), bumped(0.05)) {
            let (a, sa) = ghk(&lim, &lo, 4);
            let (b, sb) = ghk(&lim, &hi, 4);
            prop_assert!(b >= a - 3.0 * sa.hypot(sb), "{b} < {a}");
        }
    }

    #[test]
    fn identity_correlation_factorizes(lim in prop::collection::vec(-2.5f64..2.5, 1..=4)) {
        let (p, s) = ghk(&lim, &CorrelationMatrix::identity(lim.len()).unwrap(), 8);
        let prod: f64 = lim.iter().map(|&x| std_normal_cdf(x)).product();
        prop_assert!((p - prod).abs() <= 3.0 * s + 1e-9);
    }

    /// P(V_0 > x_0, V_rest ≤ x_rest) computed directly and via the flipped orientation.
    #[test]
    fn flipping_an_orientation_preserves_probabilities(
        c in corr(4),
        lim in prop::collection::vec(-1.5f64..1.5, 4),
        k in 0usize..4,
    ) {
        let rest: Vec<usize> = (0..4).filter(|&i| i != k).collect();
        let sub = c.select(&rest).unwrap();
        let sub_lim: Vec<f64> = rest.iter().map(|&i| lim[i]).collect();
        let (a, sa) = ghk(&sub_lim, &sub, 5);
        let (b, sb) = ghk(&lim, &c, 5);
        let mut flipped = lim.clone();
        flipped[k] = -lim[k];
        let (f, sf) = ghk(&flipped, &c.flip(k), 6);
        prop_assert!(((a - b) - f).abs() <= 3.0 * (sa.hypot(sb)).hypot(sf) + 1e-9, "{} vs {f}", a - b);
    }

    #[test]
    fn bivariate_cdf_respects_frechet_bounds(a in -4.0f64..4.0, b in -4.0f64..4.0, rho in -0.999f64..0.999) {
        let p = bvn_cdf(a, b, rho).unwrap();
        let (fa, fb) = (std_normal_cdf(a), std_normal_cdf(b));
        prop_assert!(p >= (fa + fb - 1.0).max(0.0) - 1e-12);
        prop_assert!(p <= fa.min(fb) + 1e-12);
    }

    #[test]
    fn projection_gives_a_positive_definite_matrix(r in prop::collection::vec(-0.99f64..0.99, 6)) {
        let rows = vec![
            vec![1.0, r[0], r[1], r[2]],
            vec![r[0], 1.0, r[3], r[4]],
            vec![r[1], r[3], 1.0, r[5]],
            vec![r[2], r[4], r[5], 1.0],
        ];
        let p = project_to_pd(&rows, PD_EPS).unwrap();
        prop_assert!(p.matrix.min_eigenvalue() >= PD_EPS * 0.5);
        for i in 0..4 {
            prop_assert!((p.matrix.get(i, i) - 1.0).abs() < 1e-12);
        }
        let again = project_to_pd(&p.matrix.rows(), PD_EPS).unwrap();
        prop_assert!(again.max_change < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn tau_matches_brute_force(v in prop::collection::vec((0u8..6, 0u8..6), 2..60)) {
        let (x, y): (Vec<f64>, Vec<f64>) = v.iter().map(|&(a, b)| (f64::from(a), f64::from(b))).unzip();
        let b = brute_tau(&x, &y);
        if b.is_nan() {
            prop_assert!(kendall_tau(&x, &y).is_err());
        } else {
            let t = kendall_tau(&x, &y).unwrap();
            prop_assert!((t - b).abs() < 1e-12, "{t} vs {b}");
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            prop_assert!((kendall_tau(&y, &x).unwrap() - t).abs() < 1e-12);
            prop_assert!((kendall_tau(&x, &neg).unwrap() + t).abs() < 1e-12);
        }
    }

    #[test]
    fn sorting_tables_have_unit_margins(v in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 100..600)) {
        let (x, y): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let t = empirical_sorting_table(&x, &y).unwrap();
        let n = x.len() as f64;
        prop_assert!((t.total() - 100.0).abs() < 1e-9);
        for m in t.row_means().into_iter().chain(t.col_means()) {
            prop_assert!((m - 1.0).abs() <= 10.0 / n + 1e-12, "mean {m}");
        }
        prop_assert!(t.kendall_tau_grouped.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn grouped_tau_is_symmetric(cells in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 10), 10)) {
        let t = kendall_tau_grouped(&cells);
        let transposed: Vec<Vec<f64>> = (0..10).map(|j| cells.iter().map(|r| r[j]).collect()).collect();
        prop_assert!((kendall_tau_grouped(&transposed) - t).abs() < 1e-12);
        let flipped: Vec<Vec<f64>> = cells.iter().map(|r| r.iter().rev().copied().collect()).collect();
        prop_assert!((kendall_tau_grouped(&flipped) + t).abs() < 1e-12);
        let scaled: Vec<Vec<f64>> = cells.iter().map(|r| r.iter().map(|v| v * 37.0).collect()).collect();
        prop_assert!((kendall_tau_grouped(&scaled) - t).abs() < 1e-12);
    }

    #[test]
    fn rearrangement_sorts_a_permutation(mut v in prop::collection::vec(0.0f64..1.0, 0..50)) {
        let mut orig = v.clone();
        rearrange(&mut v);
        prop_assert!(v.windows(2).all(|w| w[0] <= w[1]));
        orig.sort_by(f64::total_cmp);
        prop_assert_eq!(v, orig);
    }

    #[test]
    fn local_parameters_round_trip(v in prop::collection::vec(-0.9f64..0.9, 12)) {
        let p = LocalParams::from_vec(&v, 3, (1, 2));
        prop_assert_eq!(p.to_vec(), v);
        prop_assert_eq!(p.failure_orientation().failure_orientation(), p.clone());
        for r in RhoName::ALL {
            prop_assert_eq!(RhoName::parse(r.as_str()).unwrap(), r);
        }
    }

    #[test]
    fn cell_statistics_parse(r in 1usize..=10, c in 1usize..=10) {
        prop_assert_eq!(Statistic::parse(&format!("cell:{r}:{c}")).unwrap(), Statistic::Cell { row: r - 1, col: c - 1 });
    }
}

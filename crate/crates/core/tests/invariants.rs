mod common;

use common::{random_tensor, rng, small_model};
use cpnslab::buffer::{herding_select, quotas};
use cpnslab::counterfactual::CfConfig;
use cpnslab::data::{format_table, parse_table, Batch, Dataset};
use cpnslab::metrics::{linear_cka, wasserstein_1d};
use cpnslab::risk::{check_risk_bound, empirical_cpns_risk};
use cpnslab::tensor::Tensor;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |d| Tensor::from_vec(rows, cols, d).unwrap())
}

/// Naive herding: at each step score every remaining row from scratch.
fn herding_oracle(f: &Tensor, m: usize) -> Vec<usize> {
    let n = f.rows();
    let d = f.cols();
    let mu: Vec<f64> = (0..d).map(|j| (0..n).map(|i| f.get(i, j)).sum::<f64>() / n as f64).collect();
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..m.min(n) {
        let mut best = (f64::INFINITY, usize::MAX);
        for i in (0..n).filter(|i| !chosen.contains(i)) {
            let k = chosen.len() + 1;
            let dist: f64 = (0..d)
                .map(|j| {
                    let s: f64 = chosen.iter().map(|&c| f.get(c, j)).sum::<f64>() + f.get(i, j);
                    (mu[j] - s / k as f64).powi(2)
                })
                .sum();
            if dist < best.0 {
                best = (dist, i);
            }
        }
        chosen.push(best.1);
    }
    chosen
}

fn quantile_oracle(a: &[f64], b: &[f64]) -> f64 {
    // both quantile functions are constant on a grid of n·m cells
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let cells = sa.len() * sb.len();
    (0..cells)
        .map(|c| (sa[c / sb.len()] - sb[c / sa.len()]).abs())
        .sum::<f64>()
        / cells as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn herding_matches_naive_oracle(f in matrix(9, 3), m in 0usize..10) {
        prop_assert_eq!(herding_select(&f, m), herding_oracle(&f, m));
    }

    #[test]
    fn herding_first_pick_is_nearest_to_mean(f in matrix(7, 2)) {
        let oracle = herding_oracle(&f, 1);
        prop_assert_eq!(herding_select(&f, 1), oracle);
    }

    #[test]
    fn quotas_are_balanced(capacity in 0usize..5000, classes in 1usize..120) {
        let q = quotas(capacity, classes);
        prop_assert_eq!(q.iter().sum::<usize>(), capacity);
        prop_assert!(q.iter().max().unwrap() - q.iter().min().unwrap() <= 1);
        prop_assert!(q.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn table_round_trip_is_exact(x in matrix(6, 4), y in prop::collection::vec(0usize..7, 6)) {
        let ds = Dataset::new(x, y, 7).unwrap();
        let back = parse_table(&format_table(&ds)).unwrap();
        prop_assert_eq!(back.y, ds.y);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.x), bits(&ds.x));
    }

    #[test]
    fn cka_properties(x in matrix(10, 3), y in matrix(10, 2), s in 0.1f64..10.0, theta in 0.0f64..std::f64::consts::TAU) {
        let c = linear_cka(&x, &y).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&c));
        prop_assert!((c - linear_cka(&y, &x).unwrap()).abs() < 1e-10);
        prop_assert!((c - linear_cka(&x.scaled(s), &y).unwrap()).abs() < 1e-9);
        // rotating the second representation leaves CKA unchanged
        let (cs, sn) = (theta.cos(), theta.sin());
        let mut rot = y.clone();
        for r in 0..rot.rows() {
            let (a, b) = (y.get(r, 0), y.get(r, 1));
            rot.set(r, 0, cs * a - sn * b);
            rot.set(r, 1, sn * a + cs * b);
        }
        prop_assert!((c - linear_cka(&x, &rot).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn wasserstein_matches_quantile_oracle(
        a in prop::collection::vec(-10.0f64..10.0, 1..12),
        b in prop::collection::vec(-10.0f64..10.0, 1..12),
    ) {
        let w = wasserstein_1d(&a, &b).unwrap();
        prop_assert!((w - quantile_oracle(&a, &b)).abs() < 1e-9);
        prop_assert!((w - wasserstein_1d(&b, &a).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn risk_bound_holds_on_random_models(seed in any::<u64>(), n in 1usize..6, eps in 0.001f64..2.0) {
        let mut r = rng(seed);
        let model = small_model(3, seed, &[2, 3]);
        let x = random_tensor(&mut r, n, 3, 3.0);
        let y: Vec<usize> = (0..n).map(|i| 2 + i % 3).collect();
        let bx = random_tensor(&mut r, n, 3, 3.0);
        let by: Vec<usize> = (0..n).map(|i| i % 5).collect();
        let cfg = CfConfig { epsilon: eps, ..CfConfig::default() };
        let rep = empirical_cpns_risk(&model, Batch { x: &x, y: &y }, Some(Batch { x: &bx, y: &by }), &cfg).unwrap();
        prop_assert!(check_risk_bound(&rep));
        prop_assert!(rep.m_intra <= rep.r_intra && rep.m_inter <= rep.r_inter);
    }
}

use lls_core::adjust::Adjuster;
use lls_core::discretize::{kmeans, tabularize, ClusterModel};
use lls_core::discriminator::softmax;
use lls_core::eval::hungarian_match;
use lls_core::factorize::simplicial_normalize;
use lls_core::linalg::{column_normalize, condition_number_2norm, pseudo_inverse_solve, Matrix};
use lls_core::simplex::{SimplexVec, StochasticMatrix};
use lls_core::synthgen::quota_counts;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// All permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
}

fn positive_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix<f64>> {
    prop::collection::vec(0.01f64..1.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

/// Column-stochastic `r x k` with `r >= k`, and a permutation of its rows.
fn tall_stochastic() -> impl Strategy<Value = (StochasticMatrix<f64>, Vec<usize>)> {
    (1usize..5)
        .prop_flat_map(|k| (Just(k), k..8))
        .prop_flat_map(|(k, r)| {
            let perm = Just((0..r).collect::<Vec<_>>()).prop_shuffle();
            (positive_matrix(r, k), perm)
        })
        .prop_map(|(m, perm)| (column_normalize(&m).unwrap().0, perm))
}

fn simplex(dim: usize) -> impl Strategy<Value = SimplexVec<f64>> {
    prop::collection::vec(0.0f64..1.0, dim)
        .prop_filter("non-zero", |v| v.iter().sum::<f64>() > 1e-3)
        .prop_map(|v| SimplexVec::from_weights(v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pseudo_inverse_round_trip((a, _) in tall_stochastic(), seed in any::<u64>()) {
        let cond = condition_number_2norm(a.matrix()).unwrap();
        prop_assume!(cond < 1e4);
        let k = a.cols();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..k).map(|_| rand::Rng::random::<f64>(&mut rng) + 1e-3).collect();
        let g = SimplexVec::from_weights(w).unwrap();
        let b = a.matrix().mul_vec(g.as_slice()).unwrap();
        let back = pseudo_inverse_solve(a.matrix(), &b).unwrap();
        for (x, y) in back.iter().zip(g.as_slice()) {
            prop_assert!((x - y).abs() < 1e-8, "{back:?} vs {g:?}");
        }
    }

    #[test]
    fn condition_number_ignores_row_order((a, perm) in tall_stochastic()) {
        let c0 = condition_number_2norm(a.matrix()).unwrap();
        let c1 = condition_number_2norm(&a.matrix().select_rows(&perm)).unwrap();
        prop_assume!(c0.is_finite() && c0 < 1e8);
        prop_assert!((c0 - c1).abs() <= 1e-9 * c0, "{c0} vs {c1}");
    }

    #[test]
    fn column_normalize_is_idempotent(m in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| positive_matrix(r, c))) {
        let (once, _) = column_normalize(&m).unwrap();
        let (twice, scales) = column_normalize(once.matrix()).unwrap();
        prop_assert!(once.matrix().max_abs_diff(twice.matrix()).unwrap() < 1e-15);
        for s in scales {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn simplicial_normalization_keeps_the_product(
        w in positive_matrix(5, 3),
        h in positive_matrix(3, 4),
    ) {
        let (w_norm, folded, h_norm, sums) = simplicial_normalize(&w, &h);
        let before = w.matmul(&h).unwrap();
        prop_assert!(before.max_abs_diff(&w_norm.matmul(&folded).unwrap()).unwrap() < 1e-12);
        // Undoing the last column scaling restores the folded factor.
        let restored = Matrix::from_fn(3, 4, |j, d| h_norm[(j, d)] * sums[d]);
        prop_assert!(restored.max_abs_diff(&folded).unwrap() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant(logits in prop::collection::vec(-20.0f64..20.0, 1..8), shift in -50.0f64..50.0) {
        let p = softmax(&logits);
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        let q = softmax(&shifted);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hungarian_matches_brute_force(
        c in (1usize..=5).prop_flat_map(|k| prop::collection::vec(prop::collection::vec(0u32..50, k), k))
    ) {
        let k = c.len();
        let conf: Vec<Vec<f64>> = c.iter().map(|row| row.iter().map(|&x| x as f64).collect()).collect();
        let total: f64 = conf.iter().flatten().sum();
        prop_assume!(total > 0.0);
        let (perm, acc) = hungarian_match(&conf).unwrap();
        let best = permutations(k)
            .into_iter()
            .map(|p| p.iter().enumerate().map(|(pred, &t)| conf[t][pred]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((acc - best / total).abs() < 1e-12);
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..k).collect::<Vec<_>>());
    }

    #[test]
    fn adjustment_is_permutation_covariant(
        (q, perm) in (2usize..5).prop_flat_map(|k| {
            (positive_matrix(k, k + 2), Just((0..k).collect::<Vec<_>>()).prop_shuffle())
        }),
        f in simplex(16),
        domain in 0usize..4,
    ) {
        // `q` is k x r here, with r = k + 2.
        let (k, r) = q.shape();
        let q_yd = column_normalize(&q).unwrap().0;
        let f = SimplexVec::from_weights(f.as_slice()[..r].to_vec());
        prop_assume!(f.is_ok());
        let f = f.unwrap();
        let domain = domain % r;
        let base = Adjuster::new(&q_yd).and_then(|a| a.predict(&f, domain));
        prop_assume!(base.is_ok());
        let base = base.unwrap();
        let permuted = Adjuster::new(&q_yd.select_rows(&perm)).unwrap().predict(&f, domain).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            prop_assert!((permuted.q_y_given_x.as_slice()[i] - base.q_y_given_x.as_slice()[src]).abs() < 1e-9);
            prop_assert!((permuted.q_y_given_x_d.as_slice()[i] - base.q_y_given_x_d.as_slice()[src]).abs() < 1e-9);
        }
        let sorted = {
            let mut v = base.q_y_given_x_d.as_slice().to_vec();
            v.sort_by(|a, b| b.total_cmp(a));
            v
        };
        if k == 1 || sorted[0] - sorted[1] > 1e-9 {
            prop_assert_eq!(perm[permuted.y_pred], base.y_pred);
        }
    }

    #[test]
    fn argmax_stable_under_tiny_perturbation(
        q in positive_matrix(3, 5),
        f in simplex(5),
        noise in prop::collection::vec(-1e-13f64..1e-13, 5),
    ) {
        let q_yd = column_normalize(&q).unwrap().0;
        let adj = Adjuster::new(&q_yd).unwrap();
        let base = adj.predict(&f, 0);
        prop_assume!(base.is_ok());
        let base = base.unwrap();
        let mut sorted = base.q_y_given_x_d.as_slice().to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(sorted[0] - sorted[1] > 1e-6);
        let perturbed: Vec<f64> = f.as_slice().iter().zip(&noise).map(|(a, e)| (a + e).max(0.0)).collect();
        let g = SimplexVec::from_weights(perturbed).unwrap();
        prop_assert_eq!(adj.predict(&g, 0).unwrap().y_pred, base.y_pred);
    }

    #[test]
    fn kmeans_is_deterministic_and_relabels_equivariantly(
        pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 6..40),
        seed in any::<u64>(),
    ) {
        let a: Result<ClusterModel<f64>, _> = kmeans(&pts, 3, 20, 2, &mut ChaCha8Rng::seed_from_u64(seed));
        let b: Result<ClusterModel<f64>, _> = kmeans(&pts, 3, 20, 2, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assume!(a.is_ok());
        let (a, b) = (a.unwrap(), b.unwrap());
        prop_assert_eq!(a.centroids(), b.centroids());
        let reversed: Vec<Vec<f64>> = a.centroids().iter().rev().cloned().collect();
        let rev = ClusterModel::from_centroids(reversed).unwrap();
        for p in &pts {
            let i = a.assign(p);
            let j = rev.assign(p);
            let (di, dj) = (dist2(p, &a.centroids()[i]), dist2(p, &rev.centroids()[j]));
            prop_assert_eq!(di, dj);
            let tied = a.centroids().iter().filter(|c| dist2(p, c) == di).count() > 1;
            if !tied {
                prop_assert_eq!(j, 2 - i);
            }
        }
    }

    #[test]
    fn tabulated_columns_are_distributions(
        rows in prop::collection::vec((0usize..4, 0usize..3), 1..200),
    ) {
        let ids: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let domains: Vec<usize> = rows.iter().map(|r| r.1).collect();
        match tabularize::<f64>(&ids, &domains, 4, 3) {
            Ok((counts, q)) => {
                for d in 0..3 {
                    let total: usize = (0..4).map(|c| counts.counts[c][d]).sum();
                    prop_assert_eq!(total, counts.domain_totals[d]);
                    let s: f64 = (0..4).map(|c| q.get(c, d)).sum();
                    prop_assert!((s - 1.0).abs() < 1e-12);
                }
            }
            Err(_) => prop_assert!((0..3).any(|d| !domains.contains(&d))),
        }
    }

    #[test]
    fn quotas_sum_to_total(total in 0usize..10_000, w in prop::collection::vec(0.0f64..1.0, 1..8)) {
        prop_assume!(w.iter().sum::<f64>() > 0.0);
        let q = quota_counts(total, &w);
        prop_assert_eq!(q.iter().sum::<usize>(), total);
        let s: f64 = w.iter().sum();
        for (c, wi) in q.iter().zip(&w) {
            prop_assert!((*c as f64 - total as f64 * wi / s).abs() < 1.0 + 1e-9);
        }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

//! Non-negative factorization of a cluster-given-domain matrix into
//! cluster-given-class and class-given-domain factors.
//!
//! [`nmf`] is the pipeline solver (Frobenius multiplicative updates with
//! random restarts). [`spa_anchor_nmf`] selects anchor rows by successive
//! projection and is exact on separable inputs; it serves as the
//! identifiability reference.
//!
//! Both solvers finish with the same simplicial normalization: scale the
//! columns of `W` to sum to one, multiply each scale into the matching row
//! of `H`, then scale the columns of `H` to sum to one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{nnls, Matrix};
use crate::scalar::{dot, Scalar};
use crate::simplex::StochasticMatrix;

/// Starting points for the multiplicative-update restarts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmfInit {
    /// Every restart starts from `avg * U(0.1, 2.0)` entries.
    Random,
    /// Restart 0 starts from the successive-projection anchor solution when
    /// one exists; the others are random.
    Anchor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmfConfig {
    pub init: NmfInit,
    pub max_iter: usize,
    /// Residual at or below which a restart counts as converged.
    pub tol: f64,
    pub n_init: usize,
    /// Permit `k > min(m, r)`. Only the cluster-count ablation sets this.
    pub allow_rank_excess: bool,
    /// Keep the per-iteration residuals of the winning restart.
    pub record_history: bool,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self {
            init: NmfInit::Anchor,
            max_iter: 2000,
            tol: 1e-9,
            n_init: 10,
            allow_rank_excess: false,
            record_history: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FactorizationResult<T: Scalar> {
    /// Cluster-given-class factor, `m x k`.
    pub w_hat: StochasticMatrix<T>,
    /// Class-given-domain factor, `k x r`.
    pub h_hat: StochasticMatrix<T>,
    /// `|V - W H|_F` of the unnormalized product (equal to the product after
    /// folding the column scales of `W` into `H`).
    pub residual: T,
    /// `|V - w_hat h_hat|_F` after the final column normalization of `H`.
    pub normalized_residual: T,
    /// Column sums of `H` after folding, before its final normalization.
    pub h_column_sums: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<T>,
}

impl<T: Scalar + Serialize> FactorizationResult<T> {
    /// JSON export `{w, h, residual, converged}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "w": self.w_hat,
            "h": self.h_hat,
            "residual": self.residual,
            "converged": self.converged,
        })
    }
}

fn check_rank(rows: usize, cols: usize, k: usize, allow_excess: bool) -> Result<()> {
    if k == 0 || (!allow_excess && k > rows.min(cols)) {
        return Err(Error::InvalidRank { k, rows, cols });
    }
    Ok(())
}

fn residual_norm<T: Scalar>(v: &Matrix<T>, w: &Matrix<T>, h: &Matrix<T>) -> T {
    let wh = w.matmul(h).expect("conforming factors");
    let mut acc = T::zero();
    for (a, b) in v.as_slice().iter().zip(wh.as_slice()) {
        let d = *a - *b;
        acc = acc + d * d;
    }
    acc.sqrt()
}

/// Column-normalizes `W`, folds the scales into the rows of `H`, then
/// column-normalizes `H`. Returns the normalized pair and the pre-normalization
/// column sums of the folded `H`.
pub fn simplicial_normalize<T: Scalar>(
    w: &Matrix<T>,
    h: &Matrix<T>,
) -> (Matrix<T>, Matrix<T>, Matrix<T>, Vec<T>) {
    let (m, k) = w.shape();
    let r = h.cols();
    let w_scales = w.column_sums();
    let mut w_norm = Matrix::zeros(m, k);
    let mut h_folded = Matrix::zeros(k, r);
    for j in 0..k {
        let s = w_scales[j];
        for i in 0..m {
            w_norm[(i, j)] = if s > T::zero() {
                w[(i, j)] / s
            } else {
                T::one() / T::lit(m as f64)
            };
        }
        for d in 0..r {
            h_folded[(j, d)] = if s > T::zero() { h[(j, d)] * s } else { T::zero() };
        }
    }
    let h_sums = h_folded.column_sums();
    let h_norm = Matrix::from_fn(k, r, |j, d| {
        if h_sums[d] > T::zero() {
            h_folded[(j, d)] / h_sums[d]
        } else {
            T::one() / T::lit(k as f64)
        }
    });
    (w_norm, h_folded, h_norm, h_sums)
}

struct Restart<T> {
    w: Matrix<T>,
    h: Matrix<T>,
    residual: T,
    iterations: usize,
    history: Vec<T>,
}

fn random_start<T: Scalar>(v: &Matrix<T>, k: usize, seed: u64) -> (Matrix<T>, Matrix<T>) {
    let (m, r) = v.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = v.as_slice().iter().fold(T::zero(), |a, &b| a + b) / T::lit((m * r) as f64);
    let avg = (mean / T::lit(k as f64)).sqrt();
    let mut init = |rows, cols| {
        Matrix::from_fn(rows, cols, |_, _| {
            avg * T::lit(0.1 + 1.9 * rng.random::<f64>())
        })
    };
    let w = init(m, k);
    let h = init(k, r);
    (w, h)
}

fn multiplicative_updates<T: Scalar>(
    v: &Matrix<T>,
    cfg: &NmfConfig,
    start: (Matrix<T>, Matrix<T>),
) -> Restart<T> {
    let (mut w, mut h) = start;
    let tol = T::lit(cfg.tol);
    let mut residual = residual_norm(v, &w, &h);
    let mut history = Vec::new();
    if cfg.record_history {
        history.push(residual);
    }
    let mut iterations = 0;
    while iterations < cfg.max_iter && residual > tol {
        iterations += 1;
        // H <- H * (W^T V) / (W^T W H)
        let wt = w.transpose();
        let num = wt.matmul(v).expect("shapes");
        let den = wt.matmul(&w).expect("shapes").matmul(&h).expect("shapes");
        for (x, (&n, &d)) in h.values_mut().iter_mut().zip(num.as_slice().iter().zip(den.as_slice())) {
            if d > T::zero() {
                *x = *x * n / d;
            }
        }
        // W <- W * (V H^T) / (W H H^T)
        let ht = h.transpose();
        let num = v.matmul(&ht).expect("shapes");
        let den = w.matmul(&h.matmul(&ht).expect("shapes")).expect("shapes");
        for (x, (&n, &d)) in w.values_mut().iter_mut().zip(num.as_slice().iter().zip(den.as_slice())) {
            if d > T::zero() {
                *x = *x * n / d;
            }
        }
        residual = residual_norm(v, &w, &h);
        if cfg.record_history {
            history.push(residual);
        }
    }
    Restart {
        w,
        h,
        residual,
        iterations,
        history,
    }
}

/// Multiplicative-update NMF of `v` (`m x r`) with `k` components, best of
/// `cfg.n_init` random restarts by residual (earliest restart on ties).
///
/// A run that never reaches `cfg.tol` is still returned, flagged with
/// `converged = false`.
pub fn nmf<T: Scalar, R: Rng + ?Sized>(
    v: &StochasticMatrix<T>,
    k: usize,
    cfg: &NmfConfig,
    rng: &mut R,
) -> Result<FactorizationResult<T>> {
    let vm = v.matrix();
    check_rank(vm.rows(), vm.cols(), k, cfg.allow_rank_excess)?;
    let seeds: Vec<u64> = (0..cfg.n_init.max(1)).map(|_| rng.random()).collect();
    let anchored = match cfg.init {
        NmfInit::Anchor => spa_factors(vm, k).ok(),
        NmfInit::Random => None,
    };
    let restarts: Vec<Restart<T>> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let start = match (&anchored, i) {
                (Some(pair), 0) => pair.clone(),
                _ => random_start(vm, k, s),
            };
            multiplicative_updates(vm, cfg, start)
        })
        .collect();
    let best = restarts
        .into_iter()
        .reduce(|best, cand| if cand.residual < best.residual { cand } else { best })
        .expect("at least one restart");
    let (w_norm, _folded, h_norm, h_sums) = simplicial_normalize(&best.w, &best.h);
    let normalized_residual = residual_norm(vm, &w_norm, &h_norm);
    Ok(FactorizationResult {
        w_hat: StochasticMatrix::from_normalized(w_norm),
        h_hat: StochasticMatrix::from_normalized(h_norm),
        residual: best.residual,
        normalized_residual,
        h_column_sums: h_sums,
        iterations: best.iterations,
        converged: best.residual <= T::lit(cfg.tol),
        history: best.history,
    })
}

/// Residual norm below which no further anchor can be selected.
pub const SPA_RESIDUAL_FLOOR: f64 = 1e-10;

/// Anchor-row factorization by the successive projection algorithm.
///
/// Rows of `v` are scaled to sum to one; `k` anchor rows are picked greedily
/// by largest residual norm with projection after each pick. Every row is
/// then expressed as a non-negative combination of the anchor rows.
pub fn spa_anchor_nmf<T: Scalar>(v: &StochasticMatrix<T>, k: usize) -> Result<FactorizationResult<T>> {
    let vm = v.matrix();
    let (w, h) = spa_factors(vm, k)?;
    let residual = residual_norm(vm, &w, &h);
    let (w_norm, _folded, h_norm, h_sums) = simplicial_normalize(&w, &h);
    let normalized_residual = residual_norm(vm, &w_norm, &h_norm);
    Ok(FactorizationResult {
        w_hat: StochasticMatrix::from_normalized(w_norm),
        h_hat: StochasticMatrix::from_normalized(h_norm),
        residual,
        normalized_residual,
        h_column_sums: h_sums,
        iterations: k,
        converged: true,
        history: Vec::new(),
    })
}

/// Unnormalized anchor factors `(W, H)` with `H` rows equal to the
/// row-normalized anchor rows of `vm`.
fn spa_factors<T: Scalar>(vm: &Matrix<T>, k: usize) -> Result<(Matrix<T>, Matrix<T>)> {
    let (m, r) = vm.shape();
    check_rank(m, r, k, false)?;
    let row_sums = vm.row_sums();
    let normalized: Vec<Vec<T>> = (0..m)
        .map(|i| {
            if row_sums[i] > T::zero() {
                vm.row(i).iter().map(|&x| x / row_sums[i]).collect()
            } else {
                vec![T::zero(); r]
            }
        })
        .collect();

    let mut residual = normalized.clone();
    let mut anchors = Vec::with_capacity(k);
    for found in 0..k {
        let (idx, norm2) = residual
            .iter()
            .enumerate()
            .filter(|(i, _)| !anchors.contains(i))
            .map(|(i, row)| (i, dot(row, row)))
            .fold((usize::MAX, T::neg_infinity()), |acc, cand| {
                if cand.1 > acc.1 {
                    cand
                } else {
                    acc
                }
            });
        if idx == usize::MAX || !(norm2.sqrt() >= T::lit(SPA_RESIDUAL_FLOOR)) {
            return Err(Error::AnchorDeficient { found, needed: k });
        }
        anchors.push(idx);
        let norm = norm2.sqrt();
        let u: Vec<T> = residual[idx].iter().map(|&x| x / norm).collect();
        for row in residual.iter_mut() {
            let c = dot(row, &u);
            for (x, &ui) in row.iter_mut().zip(&u) {
                *x = *x - c * ui;
            }
        }
    }

    // Anchor rows, normalized, form the (unscaled) class-given-domain rows.
    let h = Matrix::from_fn(k, r, |j, d| normalized[anchors[j]][d]);
    let ht = h.transpose();
    let mut w = Matrix::zeros(m, k);
    for i in 0..m {
        if row_sums[i] == T::zero() {
            continue;
        }
        let coeffs = nnls(&ht, &normalized[i])?;
        for j in 0..k {
            w[(i, j)] = coeffs[j] * row_sums[i];
        }
    }
    Ok((w, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ProblemParams;
    use crate::selftest::matched_max_error;
    use crate::synthgen::sample_label_marginals;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Anchored 6x3 `W` (rows 0..3 anchors) times a 3x5 `H` with condition
    /// number at most 5.
    fn anchored_product(seed: u64) -> (StochasticMatrix<f64>, StochasticMatrix<f64>) {
        let mut g = rng(seed);
        let params = ProblemParams {
            k: 3,
            r: 5,
            alpha: 1.0,
            kappa_max: 5.0,
            epsilon: 0.1,
            m: 6,
            seed,
        };
        let h = sample_label_marginals(&params, &mut g).unwrap();
        let mut w = Matrix::<f64>::zeros(6, 3);
        for y in 0..3 {
            w[(y, y)] = 0.5 + g.random::<f64>();
        }
        for i in 3..6 {
            for y in 0..3 {
                w[(i, y)] = 0.1 + g.random::<f64>();
            }
        }
        let (w, _) = crate::linalg::column_normalize(&w).unwrap();
        (w.mul(&h).unwrap(), h)
    }

    #[test]
    fn identity_marginals_recover_identity() {
        let q_xy = StochasticMatrix::from_f64_rows(&[
            [0.5, 0.0, 0.0],
            [0.0, 0.6, 0.0],
            [0.0, 0.0, 0.7],
            [0.5, 0.4, 0.3],
        ])
        .unwrap();
        let id = StochasticMatrix::<f64>::identity(3);
        let v = q_xy.mul(&id).unwrap();
        for fact in [
            nmf(&v, 3, &NmfConfig::default(), &mut rng(0)).unwrap(),
            spa_anchor_nmf(&v, 3).unwrap(),
        ] {
            assert!(fact.residual <= 1e-6);
            assert!(matched_max_error(&fact.h_hat, &id).unwrap() <= 1e-6);
        }
    }

    #[test]
    fn anchored_product_recovers_h() {
        for seed in 0..10 {
            let (v, h) = anchored_product(seed);
            let fact = nmf(&v, 3, &NmfConfig::default(), &mut rng(seed)).unwrap();
            assert!(matched_max_error(&fact.h_hat, &h).unwrap() <= 1e-3, "seed {seed}");
            let spa = spa_anchor_nmf(&v, 3).unwrap();
            assert!(matched_max_error(&spa.h_hat, &h).unwrap() <= 1e-8, "seed {seed}");
        }
    }

    #[test]
    fn rank_one() {
        let v = StochasticMatrix::<f64>::from_f64_rows(&[[0.2, 0.2, 0.2], [0.3, 0.3, 0.3], [0.5, 0.5, 0.5]]).unwrap();
        for fact in [
            nmf(&v, 1, &NmfConfig::default(), &mut rng(3)).unwrap(),
            spa_anchor_nmf(&v, 1).unwrap(),
        ] {
            assert_eq!(fact.h_hat.matrix().shape(), (1, 3));
            for d in 0..3 {
                assert!((fact.h_hat.get(0, d) - 1.0).abs() < 1e-12);
            }
            for (i, want) in [0.2, 0.3, 0.5].into_iter().enumerate() {
                assert!((fact.w_hat.get(i, 0) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn spa_identity_input() {
        let id = StochasticMatrix::<f64>::identity(4);
        let fact = spa_anchor_nmf(&id, 4).unwrap();
        assert!(matched_max_error(&fact.h_hat, &id).unwrap() < 1e-12);
        assert!(matched_max_error(&fact.w_hat.cast(), &id).unwrap() < 1e-12);
    }

    #[test]
    fn rank_deficient_input_is_anchor_deficient() {
        // Columns are mixtures of two profiles, so the rank is 2 < k = 3.
        let a = [0.4, 0.3, 0.2, 0.1];
        let b = [0.1, 0.1, 0.3, 0.5];
        let weights = [0.0, 0.3, 0.6, 1.0];
        let m = Matrix::from_fn(4, 4, |i, d| weights[d] * a[i] + (1.0 - weights[d]) * b[i]);
        let v = StochasticMatrix::new(m).unwrap();
        assert!(matches!(
            spa_anchor_nmf(&v, 3),
            Err(Error::AnchorDeficient { found: 2, needed: 3 })
        ));
    }

    #[test]
    fn rank_above_shape_is_rejected() {
        let v = StochasticMatrix::<f64>::identity(3);
        assert!(matches!(
            nmf(&v, 4, &NmfConfig::default(), &mut rng(0)),
            Err(Error::InvalidRank { k: 4, .. })
        ));
        let cfg = NmfConfig {
            allow_rank_excess: true,
            ..NmfConfig::default()
        };
        let fact = nmf(&v, 4, &cfg, &mut rng(0)).unwrap();
        assert_eq!(fact.h_hat.rows(), 4);
    }

    #[test]
    fn multiplicative_updates_are_monotone() {
        for seed in 0..5 {
            let (v, _) = anchored_product(seed);
            let cfg = NmfConfig {
                init: NmfInit::Random,
                max_iter: 300,
                n_init: 1,
                record_history: true,
                ..NmfConfig::default()
            };
            let fact = nmf(&v, 3, &cfg, &mut rng(seed)).unwrap();
            assert_eq!(fact.history.len(), fact.iterations + 1);
            for pair in fact.history.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-10, "{} -> {}", pair[0], pair[1]);
            }
        }
    }

    #[test]
    fn row_permutation_leaves_h_unchanged() {
        let perm = [4, 2, 5, 0, 3, 1];
        for seed in 0..5 {
            let (v, _) = anchored_product(seed);
            let pv = v.select_rows(&perm);
            let a = spa_anchor_nmf(&v, 3).unwrap();
            let b = spa_anchor_nmf(&pv, 3).unwrap();
            assert!(matched_max_error(&a.h_hat, &b.h_hat).unwrap() < 1e-10);
            let a = nmf(&v, 3, &NmfConfig::default(), &mut rng(1)).unwrap();
            let b = nmf(&pv, 3, &NmfConfig::default(), &mut rng(1)).unwrap();
            assert!(matched_max_error(&a.h_hat, &b.h_hat).unwrap() < 1e-6);
        }
    }

    #[test]
    fn normalization_preserves_product() {
        let mut g = rng(11);
        let w = Matrix::from_fn(5, 3, |_, _| g.random::<f64>() * 3.0);
        let h = Matrix::from_fn(3, 4, |_, _| g.random::<f64>() * 2.0);
        let (w_norm, folded, h_norm, sums) = simplicial_normalize(&w, &h);
        let before = w.matmul(&h).unwrap();
        let after = w_norm.matmul(&folded).unwrap();
        assert!(before.max_abs_diff(&after).unwrap() < 1e-12);
        for (c, s) in w_norm.column_sums().into_iter().chain(h_norm.column_sums()).zip(std::iter::repeat(1.0)) {
            assert!((c - s).abs() < 1e-12);
        }
        assert_eq!(sums, folded.column_sums());
    }

    #[test]
    fn works_in_single_precision() {
        let (v, h) = anchored_product(2);
        let fact = spa_anchor_nmf(&v.cast::<f32>(), 3).unwrap();
        assert!(matched_max_error(&fact.h_hat.cast(), &h).unwrap() < 1e-4);
    }
}

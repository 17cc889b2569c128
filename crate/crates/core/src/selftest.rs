//! Executable identifiability checks on oracle quantities.
//!
//! Every check samples its own instance from a seed, so a run is fully
//! reproducible. [`Fault`] lets callers corrupt the estimate handed to the rank
//! check to confirm failures are actually reported.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adjust::{q_d_given_y, Adjuster};
use crate::discriminator::{loss_and_gradient, Architecture, DiscriminatorModel};
use crate::error::Result;
use crate::eval::hungarian_match;
use crate::factorize::spa_anchor_nmf;
use crate::linalg::{condition_number_2norm, Matrix};
use crate::params::ProblemParams;
use crate::simplex::{SimplexVec, StochasticMatrix};
use crate::synthgen::{class_priors, make_block_instance, make_discrete_instance, InstanceConfig, OracleDiscriminator};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Overwrite the second column of the estimated `Q_{D|Y}` with the first.
    RankCollapse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelftestConfig {
    pub seed: u64,
    /// Sampled points per block-mixture instance.
    pub n_points: usize,
    pub n_instances: usize,
    /// Exact discrete instances for the factorization check.
    pub n_factorizations: usize,
    /// Random models for the gradient check.
    pub n_gradient_models: usize,
    pub tol: f64,
    pub fault: Option<Fault>,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_points: 1000,
            n_instances: 3,
            n_factorizations: 20,
            n_gradient_models: 20,
            tol: 1e-8,
            fault: None,
        }
    }
}

/// Oracle, label marginals and sampled points of one block instance.
pub struct OracleSample {
    pub oracle: OracleDiscriminator,
    pub q_yd: StochasticMatrix<f64>,
    pub points: Vec<Vec<f64>>,
}

/// Block-mixture instance with shared regions, so that both anchor and
/// non-anchor points are sampled.
pub fn oracle_sample(seed: u64, n_points: usize) -> Result<OracleSample> {
    let params = ProblemParams {
        k: 3,
        r: 5,
        alpha: 0.5,
        kappa_max: 6.0,
        epsilon: 0.05,
        m: 3,
        seed,
    };
    let r = params.r;
    let cfg = InstanceConfig {
        p: 2,
        overlap_fraction: 0.4,
        n_per_domain: n_points.div_ceil(r),
        ..InstanceConfig::default()
    };
    let inst = make_block_instance(&params, &cfg)?;
    let oracle = inst.oracle()?;
    let points = inst
        .dataset()?
        .records()
        .iter()
        .take(n_points)
        .map(|rec| rec.features.clone())
        .collect();
    Ok(OracleSample {
        oracle,
        q_yd: inst.q_yd,
        points,
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Recovering `q(y|x)` from the true `Q_{D|Y}` and true `q(d|x)` is exact and
/// never needs clipping.
pub fn check_class_posterior_recovery(s: &OracleSample, tol: f64) -> Result<CheckResult> {
    let adj = Adjuster::new(&s.q_yd)?;
    let mut worst = 0.0f64;
    let mut negative = 0usize;
    for x in &s.points {
        let f = s.oracle.domain_posterior(x)?;
        let raw = adj.raw_class_coefficients(f.as_slice())?;
        negative += raw.iter().filter(|&&g| g < -tol).count();
        worst = worst.max(max_abs_diff(&raw, s.oracle.class_posterior(x)?.as_slice()));
    }
    Ok(CheckResult::new(
        "class posterior recovery",
        worst <= tol && negative == 0,
        format!("max error {worst:.2e}, {negative} negative coefficients"),
    ))
}

/// The adjusted posterior matches `q(y|x,d)` computed directly from the
/// domain's label marginal.
pub fn check_domain_adjusted_posterior(s: &OracleSample, tol: f64) -> Result<CheckResult> {
    let adj = Adjuster::new(&s.q_yd)?;
    let r = s.q_yd.cols();
    let mut worst = 0.0f64;
    for x in &s.points {
        let f = s.oracle.domain_posterior(x)?;
        for d in 0..r {
            let direct = s.oracle.domain_class_posterior(x, d);
            match (adj.predict(&f, d), direct) {
                (Ok(p), Ok(truth)) => {
                    worst = worst.max(max_abs_diff(p.q_y_given_x_d.as_slice(), truth.as_slice()))
                }
                // Both undefined: every supporting class is absent from `d`.
                (Err(_), Err(_)) => {}
                _ => worst = f64::INFINITY,
            }
        }
    }
    Ok(CheckResult::new(
        "domain-adjusted posterior",
        worst <= tol,
        format!("max error {worst:.2e}"),
    ))
}

/// Anchor points of one class share a single discriminator output, which no
/// point outside the anchor region with a different class posterior reaches.
pub fn check_anchor_collapse(s: &OracleSample) -> Result<CheckResult> {
    let k = s.q_yd.rows();
    let spec = s.oracle.spec();
    let mut first: Vec<Option<SimplexVec<f64>>> = vec![None; k];
    let mut spread = 0usize;
    let mut pairs = 0usize;
    for x in &s.points {
        if let Some(y) = spec.anchor_class(x) {
            let f = s.oracle.domain_posterior(x)?;
            match &first[y] {
                Some(f0) if f0 != &f => spread += 1,
                Some(_) => pairs += 1,
                None => first[y] = Some(f),
            }
        }
    }
    let mut collisions = 0usize;
    let mut contrasts = 0usize;
    for x in &s.points {
        let g = s.oracle.class_posterior(x)?;
        let f = s.oracle.domain_posterior(x)?;
        for (y, f0) in first.iter().enumerate() {
            let Some(f0) = f0 else { continue };
            if spec.anchor_class(x) == Some(y) || g == SimplexVec::one_hot(k, y) {
                continue;
            }
            contrasts += 1;
            if &f == f0 {
                collisions += 1;
            }
        }
    }
    let missing = first.iter().filter(|f| f.is_none()).count();
    Ok(CheckResult::new(
        "anchor outputs collapse",
        spread == 0 && collisions == 0 && missing == 0,
        format!(
            "{pairs} equal anchor pairs, {spread} unequal; {collisions} of {contrasts} contrasts collide; {missing} classes without anchor points"
        ),
    ))
}

/// Every class has positive prior mass.
pub fn check_class_priors(q_yd: &StochasticMatrix<f64>) -> CheckResult {
    let priors = class_priors(q_yd);
    let min = priors.iter().copied().fold(f64::INFINITY, f64::min);
    CheckResult::new("positive class priors", min > 0.0, format!("smallest prior {min:.4}"))
}

/// A point lies in the anchor region of `y` exactly when its class posterior
/// is one-hot at `y`.
pub fn check_anchor_one_hot(s: &OracleSample) -> Result<CheckResult> {
    let k = s.q_yd.rows();
    let spec = s.oracle.spec();
    let mut mismatches = 0usize;
    let mut anchors = 0usize;
    for x in &s.points {
        let g = s.oracle.class_posterior(x)?;
        let one_hot = (0..k).find(|&y| g == SimplexVec::one_hot(k, y));
        let anchor = spec.anchor_class(x);
        anchors += anchor.is_some() as usize;
        if one_hot != anchor {
            mismatches += 1;
        }
    }
    Ok(CheckResult::new(
        "anchor iff one-hot posterior",
        mismatches == 0,
        format!("{anchors} anchor points, {mismatches} mismatches"),
    ))
}

/// Copies column 0 of `q_dy` over column 1.
pub fn collapse_rank(q_dy: &Matrix<f64>) -> Matrix<f64> {
    let mut out = q_dy.clone();
    if out.cols() > 1 {
        for d in 0..out.rows() {
            out[(d, 1)] = out[(d, 0)];
        }
    }
    out
}

/// `Q_{D|Y}` has linearly independent columns.
pub fn check_independent_columns(q_dy: &Matrix<f64>, max_condition: f64) -> CheckResult {
    let (passed, detail) = match condition_number_2norm(q_dy) {
        Ok(c) => (c.is_finite() && c <= max_condition, format!("condition number {c:.4e}")),
        Err(e) => (false, e.to_string()),
    };
    CheckResult::new("independent columns of Q_{D|Y}", passed, detail)
}

/// `q(d|x,y)` does not depend on `x`, and `q(d|x) = Q_{D|Y} q(y|x)` agrees
/// with Bayes' rule applied to the joint density.
pub fn check_domain_independent_of_x(s: &OracleSample, tol: f64) -> Result<CheckResult> {
    let q_dy = s.oracle.q_dy();
    let spec = s.oracle.spec();
    let (k, r) = (s.q_yd.rows(), s.q_yd.cols());
    let mut worst = 0.0f64;
    for x in &s.points {
        let dens = spec.class_densities(x);
        for y in (0..k).filter(|&y| dens[y] > 0.0) {
            let given = s.oracle.domain_posterior_given_class(x, y)?;
            worst = worst.max(max_abs_diff(given.as_slice(), q_dy.column(y).as_slice()));
        }
        let joint: Vec<f64> = (0..r)
            .map(|d| (0..k).map(|y| s.q_yd.get(y, d) * dens[y]).sum::<f64>() / r as f64)
            .collect();
        let total: f64 = joint.iter().sum();
        let bayes: Vec<f64> = joint.iter().map(|j| j / total).collect();
        worst = worst.max(max_abs_diff(&bayes, s.oracle.domain_posterior(x)?.as_slice()));
    }
    Ok(CheckResult::new(
        "domain independent of x given class",
        worst <= tol,
        format!("max error {worst:.2e}"),
    ))
}

/// Exact anchored products are factorized back to the true label marginals.
pub fn check_exact_factorization(seed: u64, n_instances: usize, tol: f64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..n_instances {
        let params = ProblemParams {
            k: 4,
            r: 8,
            alpha: 0.5,
            kappa_max: 10.0,
            epsilon: 0.1,
            m: 20,
            seed: seed.wrapping_add(i as u64),
        };
        let inst = make_discrete_instance(&params, 20, 1, None, &mut rng)?;
        let fact = spa_anchor_nmf(&inst.q_xd()?, params.k)?;
        worst = worst.max(matched_max_error(&fact.h_hat, &inst.q_yd)?);
    }
    Ok(CheckResult::new(
        "exact anchored factorization",
        worst <= tol,
        format!("{n_instances} instances, max entry error {worst:.2e}"),
    ))
}

/// Largest entrywise error after the row matching that maximizes agreement.
pub fn matched_max_error(h_hat: &StochasticMatrix<f64>, q_yd: &StochasticMatrix<f64>) -> Result<f64> {
    let k = q_yd.rows();
    let r = q_yd.cols();
    // Similarity between estimated row p and true row t.
    let sim: Vec<Vec<f64>> = (0..k)
        .map(|t| {
            (0..k)
                .map(|p| -(0..r).map(|d| (h_hat.get(p, d) - q_yd.get(t, d)).abs()).sum::<f64>())
                .map(|s| s + 2.0 * r as f64)
                .collect()
        })
        .collect();
    let (perm, _) = hungarian_match(&sim)?;
    let mut worst = 0.0f64;
    for (p, &t) in perm.iter().enumerate() {
        for d in 0..r {
            worst = worst.max((h_hat.get(p, d) - q_yd.get(t, d)).abs());
        }
    }
    Ok(worst)
}

/// Largest relative deviation between the analytic cross-entropy gradient and
/// central finite differences, over one random model and batch.
pub fn gradient_error<R: Rng + ?Sized>(architecture: Architecture, rng: &mut R) -> Result<f64> {
    let input_dim = rng.random_range(1..=4);
    let output_dim = rng.random_range(2..=5);
    let mut model = DiscriminatorModel::<f64>::random(architecture, input_dim, output_dim, rng);
    let params: Vec<f64> = (0..model.num_params())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    model.set_params(&params)?;
    let xs: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..input_dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    let ys: Vec<usize> = (0..xs.len()).map(|_| rng.random_range(0..output_dim)).collect();
    let (_, grad) = loss_and_gradient(&model, &xs, &ys)?;
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        model.set_params(&probe)?;
        let up = loss_and_gradient(&model, &xs, &ys)?.0;
        probe[i] = params[i] - h;
        model.set_params(&probe)?;
        let down = loss_and_gradient(&model, &xs, &ys)?.0;
        probe[i] = params[i];
        let numeric = (up - down) / (2.0 * h);
        // Relative error, measured against unit scale for tiny components.
        let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

pub fn check_gradients(seed: u64, n_models: usize, tol: f64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..n_models {
        let arch = if i % 2 == 0 {
            Architecture::Linear
        } else {
            Architecture::Mlp { hidden: 5 }
        };
        worst = worst.max(gradient_error(arch, &mut rng)?);
    }
    Ok(CheckResult::new(
        "cross-entropy gradient",
        worst <= tol,
        format!("{n_models} models, max relative error {worst:.2e}"),
    ))
}

fn merge(name: &'static str, parts: Vec<CheckResult>) -> CheckResult {
    let passed = parts.iter().all(|c| c.passed);
    let detail = parts
        .iter()
        .enumerate()
        .map(|(i, c)| format!("[{i}] {}", c.detail))
        .collect::<Vec<_>>()
        .join("; ");
    CheckResult::new(name, passed, detail)
}

fn or_failure(name: &'static str, r: Result<CheckResult>) -> CheckResult {
    r.unwrap_or_else(|e| CheckResult::new(name, false, format!("error: {e}")))
}

fn rank_check(s: &OracleSample, fault: Option<Fault>) -> Result<CheckResult> {
    let q_dy = q_d_given_y(&s.q_yd)?.into_matrix();
    let q_dy = match fault {
        Some(Fault::RankCollapse) => collapse_rank(&q_dy),
        None => q_dy,
    };
    Ok(check_independent_columns(&q_dy, 1e8))
}

/// Runs every check. Errors inside a check are reported as failures.
pub fn run_selftest(cfg: &SelftestConfig) -> Vec<CheckResult> {
    let samples: Vec<Result<OracleSample>> = (0..cfg.n_instances)
        .map(|i| oracle_sample(cfg.seed.wrapping_add(i as u64), cfg.n_points))
        .collect();
    let tol = cfg.tol;
    let fault = cfg.fault;
    let per_sample: Vec<(&'static str, Box<dyn Fn(&OracleSample) -> Result<CheckResult>>)> = vec![
        ("class posterior recovery", Box::new(|s| check_class_posterior_recovery(s, tol))),
        ("domain-adjusted posterior", Box::new(|s| check_domain_adjusted_posterior(s, tol))),
        ("anchor outputs collapse", Box::new(check_anchor_collapse)),
        ("positive class priors", Box::new(|s| Ok(check_class_priors(&s.q_yd)))),
        ("anchor iff one-hot posterior", Box::new(check_anchor_one_hot)),
        ("independent columns of Q_{D|Y}", Box::new(move |s| rank_check(s, fault))),
        ("domain independent of x given class", Box::new(|s| check_domain_independent_of_x(s, tol))),
    ];
    let mut out = Vec::new();
    for (name, check) in &per_sample {
        let parts = samples
            .iter()
            .map(|s| match s {
                Ok(s) => or_failure(name, check(s)),
                Err(e) => CheckResult::new(name, false, format!("instance: {e}")),
            })
            .collect();
        out.push(merge(name, parts));
    }
    out.push(or_failure(
        "exact anchored factorization",
        check_exact_factorization(cfg.seed, cfg.n_factorizations, 1e-6),
    ));
    out.push(or_failure(
        "cross-entropy gradient",
        check_gradients(cfg.seed, cfg.n_gradient_models, 1e-5),
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SelftestConfig {
        SelftestConfig {
            n_points: 300,
            n_instances: 1,
            n_factorizations: 3,
            n_gradient_models: 4,
            ..SelftestConfig::default()
        }
    }

    #[test]
    fn all_checks_pass() {
        for c in run_selftest(&small()) {
            println!("{}: {}", c.name, c.detail);
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn rank_fault_is_reported() {
        let cfg = SelftestConfig {
            fault: Some(Fault::RankCollapse),
            ..small()
        };
        let results = run_selftest(&cfg);
        let failed: Vec<_> = results.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        assert_eq!(failed, vec!["independent columns of Q_{D|Y}"]);
    }

    #[test]
    fn collapse_duplicates_first_column() {
        let m = Matrix::<f64>::from_rows(&[[0.2, 0.7], [0.8, 0.3]]).unwrap();
        let c = collapse_rank(&m);
        assert_eq!(c.column(1), vec![0.2, 0.8]);
        assert!(!check_independent_columns(&c, 1e8).passed);
        assert!(check_independent_columns(&m, 1e8).passed);
    }
}

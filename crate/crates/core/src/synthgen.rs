//! Problem-instance generation.
//!
//! Label marginals are drawn column by column from a symmetric Dirichlet and
//! rejected until the matrix is well conditioned. Continuous class densities
//! are mixtures of axis-aligned uniform blocks, which keeps supports, anchor
//! regions and the true domain posterior exactly computable.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::adjust::q_d_given_y;
use crate::dataset::{DomainDataset, Record, Split};
use crate::error::{Error, Result};
use crate::linalg::{condition_number_2norm, Matrix};
use crate::params::ProblemParams;
use crate::simplex::{SimplexVec, StochasticMatrix};

pub const DEFAULT_REJECTION_BUDGET: usize = 10_000;

/// Draws one Dirichlet(concentration * 1) vector. Returns `None` when every
/// gamma variate underflows to zero.
fn dirichlet<R: Rng + ?Sized>(dim: usize, concentration: f64, rng: &mut R) -> Option<Vec<f64>> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive shape");
    let draws: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    (sum > 0.0 && sum.is_finite()).then(|| draws.into_iter().map(|x| x / sum).collect())
}

/// Samples a `k x r` label-marginal matrix whose columns are i.i.d.
/// Dirichlet(alpha/k), rejecting draws with condition number above `kappa_max`.
pub fn sample_label_marginals<R: Rng + ?Sized>(
    params: &ProblemParams,
    rng: &mut R,
) -> Result<StochasticMatrix<f64>> {
    sample_label_marginals_with(params, DEFAULT_REJECTION_BUDGET, |_| true, rng)
}

/// Like [`sample_label_marginals`] with an explicit budget and an additional
/// acceptance predicate checked after the conditioning test.
pub fn sample_label_marginals_with<R: Rng + ?Sized>(
    params: &ProblemParams,
    budget: usize,
    accept: impl Fn(&StochasticMatrix<f64>) -> bool,
    rng: &mut R,
) -> Result<StochasticMatrix<f64>> {
    params.validate_generation()?;
    let (k, r) = (params.k, params.r);
    let concentration = params.alpha / k as f64;
    let mut best = f64::INFINITY;
    for _ in 0..budget {
        let mut columns = Vec::with_capacity(r);
        for _ in 0..r {
            match dirichlet(k, concentration, rng) {
                Some(c) => columns.push(c),
                None => break,
            }
        }
        if columns.len() < r {
            continue;
        }
        let m = Matrix::from_fn(k, r, |i, j| columns[j][i]);
        let cond = condition_number_2norm(&m)?;
        if cond < best {
            best = cond;
        }
        if cond > params.kappa_max || !cond.is_finite() {
            continue;
        }
        let q = StochasticMatrix::new(m)?;
        if accept(&q) {
            return Ok(q);
        }
    }
    Err(Error::GenerationBudgetExceeded {
        attempts: budget,
        best_condition: best,
    })
}

/// Class priors `q(y) = (1/r) sum_d Q[y, d]` under equal domain weights.
pub fn class_priors(q_yd: &StochasticMatrix<f64>) -> Vec<f64> {
    let r = q_yd.cols() as f64;
    q_yd.matrix().row_sums().into_iter().map(|s| s / r).collect()
}

/// Closed axis-aligned box with a mixture weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub weight: f64,
}

impl Block {
    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&lo, &hi))| lo <= v && v <= hi)
    }

    pub fn intersects(&self, other: &Block) -> bool {
        self.lower
            .iter()
            .zip(&self.upper)
            .zip(other.lower.iter().zip(&other.upper))
            .all(|((&a_lo, &a_hi), (&b_lo, &b_hi))| a_lo <= b_hi && b_lo <= a_hi)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDensity {
    pub blocks: Vec<Block>,
    /// Index of the block supported by this class alone.
    pub anchor: usize,
}

impl ClassDensity {
    pub fn density(&self, x: &[f64]) -> f64 {
        self.blocks
            .iter()
            .filter(|b| b.contains(x))
            .map(|b| b.weight / b.volume())
            .sum()
    }

    pub fn anchor_block(&self) -> &Block {
        &self.blocks[self.anchor]
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let last = self.blocks.len() - 1;
        for (i, b) in self.blocks.iter().enumerate() {
            acc += b.weight;
            if u < acc || i == last {
                return b.sample(rng);
            }
        }
        unreachable!("non-empty block list")
    }
}

/// Per-class block-mixture densities on `R^p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub p: usize,
    pub classes: Vec<ClassDensity>,
}

impl MixtureSpec {
    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidParams(msg));
        if self.classes.is_empty() {
            return invalid("mixture has no classes".into());
        }
        for (y, class) in self.classes.iter().enumerate() {
            if class.anchor >= class.blocks.len() {
                return invalid(format!("class {y} anchor index out of range"));
            }
            let mut total = 0.0;
            for b in &class.blocks {
                if b.lower.len() != self.p || b.upper.len() != self.p {
                    return invalid(format!("class {y} has a block of wrong dimension"));
                }
                if !(b.weight > 0.0) || !(b.volume() > 0.0) {
                    return invalid(format!("class {y} has an empty or zero-weight block"));
                }
                total += b.weight;
            }
            if (total - 1.0).abs() > 1e-9 {
                return invalid(format!("class {y} block weights sum to {total}"));
            }
            let anchor = class.anchor_block();
            for (other, oc) in self.classes.iter().enumerate() {
                if other != y && oc.blocks.iter().any(|b| b.intersects(anchor)) {
                    return invalid(format!("anchor of class {y} overlaps class {other}"));
                }
            }
        }
        Ok(())
    }

    /// Smallest within-class anchor weight.
    pub fn min_anchor_weight(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| c.anchor_block().weight)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn class_densities(&self, x: &[f64]) -> Vec<f64> {
        self.classes.iter().map(|c| c.density(x)).collect()
    }

    /// Class whose anchor block contains `x`, if any.
    pub fn anchor_class(&self, x: &[f64]) -> Option<usize> {
        self.classes.iter().position(|c| c.anchor_block().contains(x))
    }
}

/// Builds `k` classes on `R^p`. Class `y` owns the anchor block `[2y, 2y+1]`
/// on the first axis; with `overlap_fraction > 0` every class also places that
/// much mass on a common block `[2k, 2k+1]`. Remaining axes span a random
/// sub-interval of `[0, 1]` of width at least one half.
pub fn make_block_mixture<R: Rng + ?Sized>(
    params: &ProblemParams,
    p: usize,
    overlap_fraction: f64,
    rng: &mut R,
) -> Result<MixtureSpec> {
    if p == 0 {
        return Err(Error::InvalidParams("feature dimension must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::InvalidParams(format!(
            "overlap_fraction={overlap_fraction} must lie in [0, 1)"
        )));
    }
    if overlap_fraction + params.epsilon > 1.0 + 1e-12 {
        return Err(Error::InvalidParams(format!(
            "overlap_fraction {overlap_fraction} leaves less than epsilon={} for the anchor",
            params.epsilon
        )));
    }
    let k = params.k;
    let side_box = |first_lo: f64, rng: &mut R| {
        let mut lower = vec![first_lo];
        let mut upper = vec![first_lo + 1.0];
        for _ in 1..p {
            let width = 0.5 + 0.5 * rng.random::<f64>();
            let lo = (1.0 - width) * rng.random::<f64>();
            lower.push(lo);
            upper.push(lo + width);
        }
        (lower, upper)
    };
    let (shared_lo, shared_hi) = side_box(2.0 * k as f64, rng);
    let mut classes = Vec::with_capacity(k);
    for y in 0..k {
        let (lower, upper) = side_box(2.0 * y as f64, rng);
        let mut blocks = vec![Block {
            lower,
            upper,
            weight: 1.0 - overlap_fraction,
        }];
        if overlap_fraction > 0.0 {
            blocks.push(Block {
                lower: shared_lo.clone(),
                upper: shared_hi.clone(),
                weight: overlap_fraction,
            });
        }
        classes.push(ClassDensity { blocks, anchor: 0 });
    }
    let spec = MixtureSpec { p, classes };
    spec.validate()?;
    Ok(spec)
}

/// Splits `total` into integer counts proportional to `weights` by the
/// largest-remainder rule; ties go to the lowest index.
pub fn quota_counts(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Fractions of each domain's samples assigned to train, valid and test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            valid: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|f| !(*f >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams(format!(
                "split fractions {parts:?} must be non-negative and sum to 1"
            )));
        }
        Ok(())
    }
}

/// Class-conditional feature source for [`sample_dataset`].
#[derive(Clone, Copy, Debug)]
pub enum FeatureSource<'a> {
    Blocks(&'a MixtureSpec),
    /// Discrete vocabulary; features are one-hot encodings of the drawn token.
    Discrete(&'a StochasticMatrix<f64>),
}

impl FeatureSource<'_> {
    fn k(&self) -> usize {
        match self {
            FeatureSource::Blocks(s) => s.k(),
            FeatureSource::Discrete(q) => q.cols(),
        }
    }

    fn p(&self) -> usize {
        match self {
            FeatureSource::Blocks(s) => s.p,
            FeatureSource::Discrete(q) => q.rows(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, y: usize, rng: &mut R) -> Vec<f64> {
        match self {
            FeatureSource::Blocks(s) => s.classes[y].sample(rng),
            FeatureSource::Discrete(q) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut token = q.rows() - 1;
                for i in 0..q.rows() {
                    acc += q.get(i, y);
                    if u < acc {
                        token = i;
                        break;
                    }
                }
                let mut x = vec![0.0; q.rows()];
                x[token] = 1.0;
                x
            }
        }
    }
}

/// Draws `n_per_domain` records per domain. Each split receives its share by
/// largest remainder, and within a split each domain's class counts are the
/// largest-remainder quotas of that domain's label marginal.
pub fn sample_dataset<R: Rng + ?Sized>(
    q_yd: &StochasticMatrix<f64>,
    source: FeatureSource<'_>,
    n_per_domain: usize,
    splits: SplitFractions,
    rng: &mut R,
) -> Result<DomainDataset> {
    if n_per_domain == 0 {
        return Err(Error::InvalidParams("n_per_domain must be at least 1".into()));
    }
    splits.validate()?;
    if source.k() != q_yd.rows() {
        return Err(Error::ShapeMismatch(format!(
            "feature source has {} classes, label marginals have {}",
            source.k(),
            q_yd.rows()
        )));
    }
    let r = q_yd.cols();
    let split_counts = quota_counts(n_per_domain, &[splits.train, splits.valid, splits.test]);
    let mut records = Vec::with_capacity(r * n_per_domain);
    for (split, &n_split) in Split::ALL.iter().zip(&split_counts) {
        for d in 0..r {
            let column = q_yd.column(d);
            let quotas = quota_counts(n_split, column.as_slice());
            let mut labels: Vec<usize> = quotas
                .iter()
                .enumerate()
                .flat_map(|(y, &c)| std::iter::repeat_n(y, c))
                .collect();
            labels.shuffle(rng);
            for y in labels {
                records.push(Record {
                    split: *split,
                    features: source.sample(y, rng),
                    domain: d,
                    label: Some(y),
                });
            }
        }
    }
    DomainDataset::new(r, source.p(), records)
}

/// Exact domain discriminator `x -> q(d|x)` for a block mixture.
#[derive(Clone, Debug)]
pub struct OracleDiscriminator {
    spec: MixtureSpec,
    q_yd: StochasticMatrix<f64>,
    q_dy: StochasticMatrix<f64>,
    priors: Vec<f64>,
}

impl OracleDiscriminator {
    pub fn new(spec: &MixtureSpec, q_yd: &StochasticMatrix<f64>) -> Result<Self> {
        if spec.k() != q_yd.rows() {
            return Err(Error::ShapeMismatch(format!(
                "mixture has {} classes, label marginals have {}",
                spec.k(),
                q_yd.rows()
            )));
        }
        Ok(Self {
            spec: spec.clone(),
            q_yd: q_yd.clone(),
            q_dy: q_d_given_y(q_yd)?,
            priors: class_priors(q_yd),
        })
    }

    pub fn num_domains(&self) -> usize {
        self.q_yd.cols()
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    pub fn q_dy(&self) -> &StochasticMatrix<f64> {
        &self.q_dy
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    /// Marginal density `q(x) = sum_y q(y) q(x|y)`.
    pub fn marginal_density(&self, x: &[f64]) -> f64 {
        self.spec
            .class_densities(x)
            .iter()
            .zip(&self.priors)
            .map(|(px, py)| px * py)
            .sum()
    }

    /// Class posterior `q(y|x)` by Bayes' rule.
    pub fn class_posterior(&self, x: &[f64]) -> Result<SimplexVec<f64>> {
        let joint: Vec<f64> = self
            .spec
            .class_densities(x)
            .iter()
            .zip(&self.priors)
            .map(|(px, py)| px * py)
            .collect();
        if joint.iter().all(|&v| v == 0.0) {
            return Err(Error::OutOfSupport);
        }
        SimplexVec::from_weights(joint)
    }

    /// `q(d|x) = Q_{D|Y} q(y|x)`.
    pub fn domain_posterior(&self, x: &[f64]) -> Result<SimplexVec<f64>> {
        let g = self.class_posterior(x)?;
        let f = self.q_dy.matrix().mul_vec(g.as_slice())?;
        Ok(SimplexVec::from_trusted(f))
    }

    /// `q(y|x,d)` computed directly from the domain's label marginal and the
    /// class densities, without going through `q(d|x)`.
    pub fn domain_class_posterior(&self, x: &[f64], d: usize) -> Result<SimplexVec<f64>> {
        let joint: Vec<f64> = self
            .spec
            .class_densities(x)
            .iter()
            .enumerate()
            .map(|(y, px)| px * self.q_yd.get(y, d))
            .collect();
        if joint.iter().all(|&v| v == 0.0) {
            return Err(Error::OutOfSupport);
        }
        SimplexVec::from_weights(joint)
    }

    /// `q(d|x,y)` from the joint `q(x,y,d) = (1/r) Q[y,d] q(x|y)`.
    pub fn domain_posterior_given_class(&self, x: &[f64], y: usize) -> Result<SimplexVec<f64>> {
        let px = self.spec.classes[y].density(x);
        if px == 0.0 {
            return Err(Error::OutOfSupport);
        }
        let r = self.num_domains() as f64;
        let joint: Vec<f64> = (0..self.num_domains())
            .map(|d| self.q_yd.get(y, d) / r * px)
            .collect();
        SimplexVec::from_weights(joint)
    }
}

/// Settings for block-mixture instances beyond [`ProblemParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstanceConfig {
    pub p: usize,
    pub overlap_fraction: f64,
    pub n_per_domain: usize,
    pub splits: SplitFractions,
    pub rejection_budget: usize,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            p: 1,
            overlap_fraction: 0.3,
            n_per_domain: 2000,
            splits: SplitFractions::default(),
            rejection_budget: DEFAULT_REJECTION_BUDGET,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    Blocks(MixtureSpec),
    Discrete { q_xy: StochasticMatrix<f64> },
}

#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub params: ProblemParams,
    pub q_yd: StochasticMatrix<f64>,
    pub truth: GroundTruth,
    pub dataset: Option<DomainDataset>,
}

impl ProblemInstance {
    pub fn oracle(&self) -> Result<OracleDiscriminator> {
        match &self.truth {
            GroundTruth::Blocks(spec) => OracleDiscriminator::new(spec, &self.q_yd),
            GroundTruth::Discrete { .. } => Err(Error::InvalidInput(
                "oracle discriminator needs a block-mixture instance".into(),
            )),
        }
    }

    pub fn dataset(&self) -> Result<&DomainDataset> {
        self.dataset
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("instance carries no sampled dataset".into()))
    }

    /// `Q_{X|D} = Q_{X|Y} Q_{Y|D}` for discrete instances.
    pub fn q_xd(&self) -> Result<StochasticMatrix<f64>> {
        match &self.truth {
            GroundTruth::Discrete { q_xy } => q_xy.mul(&self.q_yd),
            GroundTruth::Blocks(_) => Err(Error::InvalidInput(
                "Q_{X|D} is only tabulated for discrete instances".into(),
            )),
        }
    }

    pub fn truth_document(&self) -> TruthDocument {
        let (spec, q_xy) = match &self.truth {
            GroundTruth::Blocks(s) => (Some(s.clone()), None),
            GroundTruth::Discrete { q_xy } => (None, Some(q_xy.matrix().to_rows())),
        };
        TruthDocument {
            k: self.params.k,
            r: self.params.r,
            alpha: self.params.alpha,
            kappa_max: self.params.kappa_max,
            epsilon: self.params.epsilon,
            seed: self.params.seed,
            q_yd: self.q_yd.matrix().to_rows(),
            spec,
            q_xy,
            labels: self.dataset.as_ref().and_then(|d| d.all_labels()),
        }
    }

    pub fn from_truth_document(doc: &TruthDocument, dataset: Option<DomainDataset>) -> Result<Self> {
        let params = ProblemParams {
            k: doc.k,
            r: doc.r,
            alpha: doc.alpha,
            kappa_max: doc.kappa_max,
            epsilon: doc.epsilon,
            m: doc.k,
            seed: doc.seed,
        };
        let q_yd = StochasticMatrix::from_validated(Matrix::from_rows(&doc.q_yd)?)?;
        let truth = match (&doc.spec, &doc.q_xy) {
            (Some(spec), None) => GroundTruth::Blocks(spec.clone()),
            (None, Some(q_xy)) => GroundTruth::Discrete {
                q_xy: StochasticMatrix::from_validated(Matrix::from_rows(q_xy)?)?,
            },
            _ => {
                return Err(Error::InvalidInput(
                    "ground truth needs exactly one of `spec` or `q_xy`".into(),
                ))
            }
        };
        Ok(Self {
            params,
            q_yd,
            truth,
            dataset,
        })
    }
}

/// Serialized ground truth, kept apart from the observed dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthDocument {
    pub k: usize,
    pub r: usize,
    pub alpha: f64,
    pub kappa_max: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub q_yd: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<MixtureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_xy: Option<Vec<Vec<f64>>>,
    /// Hidden class of every dataset record, in file order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
}

/// Deterministic block-mixture instance. The label marginals are additionally
/// rejected until every anchor region carries at least `epsilon` of the
/// pooled mass, `q(y) * w_anchor(y) >= epsilon`.
pub fn make_block_instance(params: &ProblemParams, cfg: &InstanceConfig) -> Result<ProblemInstance> {
    params.validate_generation()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let spec = make_block_mixture(params, cfg.p, cfg.overlap_fraction, &mut rng)?;
    let anchor_weights: Vec<f64> = spec.classes.iter().map(|c| c.anchor_block().weight).collect();
    let eps = params.epsilon;
    let q_yd = sample_label_marginals_with(
        params,
        cfg.rejection_budget,
        |q| {
            class_priors(q)
                .iter()
                .zip(&anchor_weights)
                .all(|(py, w)| py * w >= eps)
        },
        &mut rng,
    )?;
    let dataset = sample_dataset(
        &q_yd,
        FeatureSource::Blocks(&spec),
        cfg.n_per_domain,
        cfg.splits,
        &mut rng,
    )?;
    Ok(ProblemInstance {
        params: params.clone(),
        q_yd,
        truth: GroundTruth::Blocks(spec),
        dataset: Some(dataset),
    })
}

/// Exact discrete (topic-model) instance over a vocabulary of `m` tokens.
///
/// The first `k * anchors_per_class` token rows are anchors (positive in one
/// class column only); the rest are shared. Rows are then shuffled. When
/// `n_per_domain` is given, a one-hot encoded dataset is sampled as well.
pub fn make_discrete_instance<R: Rng + ?Sized>(
    params: &ProblemParams,
    m: usize,
    anchors_per_class: usize,
    n_per_domain: Option<usize>,
    rng: &mut R,
) -> Result<ProblemInstance> {
    params.validate_generation()?;
    let k = params.k;
    if anchors_per_class == 0 {
        return Err(Error::InvalidParams("need at least one anchor token per class".into()));
    }
    if m < k * anchors_per_class {
        return Err(Error::InvalidParams(format!(
            "vocabulary of {m} tokens cannot hold {anchors_per_class} anchors for {k} classes"
        )));
    }
    let q_yd = sample_label_marginals(params, rng)?;

    let n_anchor = k * anchors_per_class;
    let mut raw = Matrix::<f64>::zeros(m, k);
    for i in 0..n_anchor {
        raw[(i, i / anchors_per_class)] = 0.5 + rng.random::<f64>();
    }
    for i in n_anchor..m {
        for y in 0..k {
            raw[(i, y)] = 0.05 + rng.random::<f64>();
        }
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let (q_xy, _) = crate::linalg::column_normalize(&raw.select_rows(&order))?;

    let dataset = match n_per_domain {
        Some(n) => Some(sample_dataset(
            &q_yd,
            FeatureSource::Discrete(&q_xy),
            n,
            SplitFractions::default(),
            rng,
        )?),
        None => None,
    };
    Ok(ProblemInstance {
        params: params.clone(),
        q_yd,
        truth: GroundTruth::Discrete { q_xy },
        dataset,
    })
}

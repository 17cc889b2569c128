//! Permutation-matched evaluation, the end-to-end pipeline, and sweeps.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjust::{naive_predict, Adjuster, Prediction};
use crate::dataset::{DomainDataset, Split};
use crate::discretize::{kmeans, oracle_point_mass_groups, tabularize, ClusterModel, KmeansConfig, TabularCounts};
use crate::discriminator::{train_on_views, Architecture, DiscriminatorModel, LossCurves, TrainConfig};
use crate::error::{Error, Result, StageExt};
use crate::factorize::{nmf, FactorizationResult, NmfConfig};
use crate::params::ProblemParams;
use crate::simplex::{SimplexVec, StochasticMatrix};
use crate::synthgen::{make_block_instance, InstanceConfig, OracleDiscriminator, ProblemInstance};

/// Minimum-cost perfect assignment on a square cost matrix. Returns
/// `assignment[row] = column`. Shortest augmenting paths with potentials,
/// `O(n^3)`.
pub fn hungarian_min(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if let Some(row) = cost.iter().find(|row| row.len() != n) {
        return Err(Error::ShapeMismatch(format!("{n} rows but a row of length {}", row.len())));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("non-finite cost".into()));
    }
    // 1-based arrays with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// Best relabeling of predicted classes. `confusion[t][p]` counts points of
/// true class `t` predicted as `p`. Returns `perm` with `perm[p]` the true
/// class matched to predicted class `p`, and the matched accuracy.
pub fn hungarian_match(confusion: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let k = confusion.len();
    if confusion.iter().any(|row| row.len() != k) {
        return Err(Error::ShapeMismatch("confusion matrix must be square".into()));
    }
    if confusion.iter().flatten().any(|&c| !(c >= 0.0)) {
        return Err(Error::InvalidInput("confusion entries must be non-negative".into()));
    }
    let total: f64 = confusion.iter().flatten().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("confusion matrix is empty".into()));
    }
    let cost: Vec<Vec<f64>> = (0..k)
        .map(|p| (0..k).map(|t| -confusion[t][p]).collect())
        .collect();
    let perm = hungarian_min(&cost)?;
    let matched: f64 = perm.iter().enumerate().map(|(p, &t)| confusion[t][p]).sum();
    Ok((perm, matched / total))
}

/// Mean absolute entrywise difference after matching row `p` of `q_hat` to
/// row `perm[p]` of `q_true`.
pub fn q_yd_error(q_hat: &StochasticMatrix<f64>, q_true: &StochasticMatrix<f64>, perm: &[usize]) -> Result<f64> {
    let (k, r) = (q_true.rows(), q_true.cols());
    if q_hat.rows() != k || q_hat.cols() != r || perm.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "estimate {}x{}, truth {k}x{r}, permutation of length {}",
            q_hat.rows(),
            q_hat.cols(),
            perm.len()
        )));
    }
    let mut seen = vec![false; k];
    for &t in perm {
        if t >= k || std::mem::replace(&mut seen[t], true) {
            return Err(Error::InvalidInput("permutation is not a bijection".into()));
        }
    }
    let mut total = 0.0;
    for (p, &t) in perm.iter().enumerate() {
        for d in 0..r {
            total += (q_hat.get(p, d) - q_true.get(t, d)).abs();
        }
    }
    Ok(total / (k * r) as f64)
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize], k: usize) -> Result<Vec<Vec<u64>>> {
    if truth.len() != predicted.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut c = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= k || p >= k {
            return Err(Error::InvalidInput(format!("class {t} or {p} outside 0..{k}")));
        }
        c[t][p] += 1;
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Exact discriminator from the generating densities.
    Oracle,
    /// Discriminator trained on the observed data.
    #[default]
    Learned,
    /// Cluster-level prediction from an arbitrary representation.
    Naive,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Oracle => "oracle",
            Mode::Learned => "learned",
            Mode::Naive => "naive",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Mode::Oracle),
            "learned" => Ok(Mode::Learned),
            "naive" => Ok(Mode::Naive),
            other => Err(Error::InvalidParams(format!(
                "unknown mode {other:?} (expected oracle, learned or naive)"
            ))),
        }
    }
}

/// Representation clustered in naive mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Representation {
    /// Standard Gaussian vectors drawn per record, independent of the
    /// features and therefore of the class.
    Noise { dim: usize },
    /// Gaussian random projection of the features.
    Projection { dim: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub kmeans: KmeansConfig,
    pub nmf: NmfConfig,
    pub representation: Representation,
    /// Sup-norm tolerance for merging exact discriminator outputs.
    pub match_tol: f64,
    /// Seed for clustering, factorization and naive representations.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                architecture: Architecture::Mlp { hidden: 64 },
                learning_rate: 0.05,
                momentum: 0.9,
                ..TrainConfig::default()
            },
            kmeans: KmeansConfig::default(),
            nmf: NmfConfig::default(),
            representation: Representation::Noise { dim: 2 },
            match_tol: 1e-9,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Copy with every seed replaced by `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.seed = seed;
        out.train.seed = seed;
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub discriminate: f64,
    pub discretize: f64,
    pub factorize: f64,
    pub adjust: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IndexedPrediction {
    /// Position of the record in the dataset.
    pub index: usize,
    pub domain: usize,
    pub prediction: Prediction<f64>,
}

/// Everything produced without looking at labels.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub mode: Mode,
    pub k: usize,
    pub m: usize,
    pub factorization: FactorizationResult<f64>,
    pub counts: TabularCounts,
    pub discriminator: Option<(DiscriminatorModel<f64>, LossCurves)>,
    pub clusters: Option<ClusterModel<f64>>,
    /// Test-split predictions.
    pub predictions: Vec<IndexedPrediction>,
    pub timings: StageTimings,
}

impl PipelineRun {
    pub fn q_yd_hat(&self) -> &StochasticMatrix<f64> {
        &self.factorization.h_hat
    }
}

fn representation_vectors(rep: Representation, dataset: &DomainDataset, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5_eed0_fa11);
    match rep {
        Representation::Noise { dim } | Representation::Projection { dim } if dim == 0 => {
            Err(Error::InvalidParams("representation dimension must be positive".into()))
        }
        Representation::Noise { dim } => Ok((0..dataset.len())
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()),
        Representation::Projection { dim } => {
            let p = dataset.feature_dim();
            let proj: Vec<Vec<f64>> = (0..dim)
                .map(|_| (0..p).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            Ok(dataset
                .records()
                .iter()
                .map(|rec| {
                    proj.iter()
                        .map(|row| row.iter().zip(&rec.features).map(|(a, b)| a * b).sum())
                        .collect()
                })
                .collect())
        }
    }
}

/// Runs the pipeline on the train and validation splits and predicts the
/// test split. Only label-free views of the dataset are read.
pub fn run_blind(
    dataset: &DomainDataset,
    params: &ProblemParams,
    oracle: Option<&OracleDiscriminator>,
    mode: Mode,
    cfg: &PipelineConfig,
) -> Result<PipelineRun> {
    let (k, m, r) = (params.k, params.m, dataset.num_domains());
    let fit = dataset.observed(&[Split::Train, Split::Valid]);
    let test = dataset.observed(&[Split::Test]);
    if fit.is_empty() || test.is_empty() {
        return Err(Error::InvalidInput("dataset needs fitting and test records".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut timings = StageTimings::default();

    if mode == Mode::Naive {
        let t = Instant::now();
        let reps = representation_vectors(cfg.representation, dataset, cfg.seed).stage("discriminate")?;
        timings.discriminate = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let fit_reps: Vec<&[f64]> = fit.indices.iter().map(|&i| reps[i].as_slice()).collect();
        let clusters = kmeans(&fit_reps, m, cfg.kmeans.niter, cfg.kmeans.nredo, &mut rng).stage("discretize")?;
        let ids = clusters.assign_all(&fit_reps);
        let (counts, q_cd) = tabularize::<f64>(&ids, &fit.domains, m, r).stage("discretize")?;
        timings.discretize = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let factorization = nmf(&q_cd, k, &cfg.nmf, &mut rng).stage("factorize")?;
        timings.factorize = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let predictions = test
            .indices
            .iter()
            .zip(&test.domains)
            .map(|(&i, &d)| {
                let c = clusters.assign(&reps[i]);
                naive_predict(&factorization.w_hat, &factorization.h_hat, c, d).map(|prediction| IndexedPrediction {
                    index: i,
                    domain: d,
                    prediction,
                })
            })
            .collect::<Result<Vec<_>>>()
            .stage("adjust")?;
        timings.adjust = t.elapsed().as_secs_f64();
        return Ok(PipelineRun {
            mode,
            k,
            m,
            factorization,
            counts,
            discriminator: None,
            clusters: Some(clusters),
            predictions,
            timings,
        });
    }

    // Discriminate.
    let t = Instant::now();
    let discriminator = match mode {
        Mode::Learned => {
            let train = dataset.observed(&[Split::Train]);
            let valid = dataset.observed(&[Split::Valid]);
            Some(train_on_views(&train, &valid, r, &cfg.train).stage("discriminate")?)
        }
        _ => {
            if oracle.is_none() {
                return Err(Error::InvalidInput(
                    "oracle mode needs the generating densities".into(),
                )
                .in_stage("discriminate"));
            }
            None
        }
    };
    let posterior = |x: &[f64]| -> Result<SimplexVec<f64>> {
        match (&discriminator, oracle) {
            (Some((model, _)), _) => model.predict(x),
            (None, Some(o)) => o.domain_posterior(x),
            (None, None) => unreachable!("checked above"),
        }
    };
    let fit_f: Vec<Vec<f64>> = fit
        .features
        .iter()
        .map(|x| posterior(x).map(SimplexVec::into_vec))
        .collect::<Result<_>>()
        .stage("discriminate")?;
    timings.discriminate = t.elapsed().as_secs_f64();

    // Discretize.
    let t = Instant::now();
    let (ids, m_used, clusters) = if mode == Mode::Oracle {
        let groups = oracle_point_mass_groups(&fit_f, params.epsilon, fit_f.len(), cfg.match_tol);
        (groups.ids, groups.m, None)
    } else {
        let model = kmeans(&fit_f, m, cfg.kmeans.niter, cfg.kmeans.nredo, &mut rng).stage("discretize")?;
        (model.assign_all(&fit_f), m, Some(model))
    };
    let (counts, q_cd) = tabularize::<f64>(&ids, &fit.domains, m_used, r).stage("discretize")?;
    timings.discretize = t.elapsed().as_secs_f64();

    // Factorize.
    let t = Instant::now();
    let factorization = nmf(&q_cd, k, &cfg.nmf, &mut rng).stage("factorize")?;
    timings.factorize = t.elapsed().as_secs_f64();

    // Adjust.
    let t = Instant::now();
    let adjuster = Adjuster::new(&factorization.h_hat).stage("adjust")?;
    let predictions = test
        .indices
        .iter()
        .zip(&test.features)
        .zip(&test.domains)
        .map(|((&i, x), &d)| {
            let f = posterior(x)?;
            adjuster.predict(&f, d).map(|prediction| IndexedPrediction {
                index: i,
                domain: d,
                prediction,
            })
        })
        .collect::<Result<Vec<_>>>()
        .stage("adjust")?;
    timings.adjust = t.elapsed().as_secs_f64();

    Ok(PipelineRun {
        mode,
        k,
        m: m_used,
        factorization,
        counts,
        discriminator,
        clusters,
        predictions,
        timings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub k: usize,
    pub r: usize,
    pub m: usize,
    pub n_test: usize,
    pub accuracy: f64,
    /// `permutation[p]` is the true class matched to recovered class `p`.
    pub permutation: Vec<usize>,
    pub q_yd_error: f64,
    pub balanced_accuracy: f64,
    /// `confusion[t][p]`: true class `t`, recovered class `p`.
    pub confusion: Vec<Vec<u64>>,
    pub per_domain_accuracy: Vec<f64>,
    pub q_yd_hat: Vec<Vec<f64>>,
    pub h_column_sums: Vec<f64>,
    pub nmf_residual: f64,
    pub nmf_converged: bool,
    /// Wall-clock seconds; excluded from the serialized report so that
    /// reruns produce identical bytes.
    #[serde(skip)]
    pub timings: StageTimings,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Scores a finished run against the hidden labels of its test records.
pub fn evaluate(run: &PipelineRun, labels: &[usize], q_true: &StochasticMatrix<f64>) -> Result<EvalReport> {
    let k = run.k;
    let r = q_true.cols();
    if labels.len() != run.predictions.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} predictions",
            labels.len(),
            run.predictions.len()
        )));
    }
    let predicted: Vec<usize> = run.predictions.iter().map(|p| p.prediction.y_pred).collect();
    let confusion = confusion_matrix(labels, &predicted, k)?;
    let conf_f: Vec<Vec<f64>> = confusion
        .iter()
        .map(|row| row.iter().map(|&c| c as f64).collect())
        .collect();
    let (permutation, accuracy) = hungarian_match(&conf_f)?;
    let err = q_yd_error(run.q_yd_hat(), q_true, &permutation)?;

    let mut hits = vec![0usize; r];
    let mut totals = vec![0usize; r];
    for (p, &t) in run.predictions.iter().zip(labels) {
        totals[p.domain] += 1;
        if permutation[p.prediction.y_pred] == t {
            hits[p.domain] += 1;
        }
    }
    let per_domain_accuracy = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &n)| if n > 0 { h as f64 / n as f64 } else { f64::NAN })
        .collect();

    let mut recalls = Vec::new();
    for t in 0..k {
        let support: u64 = confusion[t].iter().sum();
        if support > 0 {
            let p = permutation.iter().position(|&tt| tt == t).expect("bijection");
            recalls.push(confusion[t][p] as f64 / support as f64);
        }
    }
    let balanced_accuracy = recalls.iter().sum::<f64>() / recalls.len().max(1) as f64;

    Ok(EvalReport {
        mode: run.mode,
        k,
        r,
        m: run.m,
        n_test: labels.len(),
        accuracy,
        permutation,
        q_yd_error: err,
        balanced_accuracy,
        confusion,
        per_domain_accuracy,
        q_yd_hat: run.q_yd_hat().matrix().to_rows(),
        h_column_sums: run.factorization.h_column_sums.clone(),
        nmf_residual: run.factorization.residual,
        nmf_converged: run.factorization.converged,
        timings: run.timings,
    })
}

/// Full pipeline on a generated instance; labels are only consulted by the
/// final scoring step.
pub fn run_pipeline(instance: &ProblemInstance, mode: Mode, cfg: &PipelineConfig) -> Result<EvalReport> {
    let dataset = instance.dataset()?;
    let blind = dataset.without_labels();
    let oracle = match mode {
        Mode::Oracle => Some(instance.oracle()?),
        _ => None,
    };
    let run = run_blind(&blind, &instance.params, oracle.as_ref(), mode, cfg)?;
    let labels = dataset
        .labels_at(&run.predictions.iter().map(|p| p.index).collect::<Vec<_>>())
        .ok_or_else(|| Error::InvalidInput("instance dataset has hidden labels".into()).in_stage("evaluate"))?;
    evaluate(&run, &labels, &instance.q_yd).stage("evaluate")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub alpha: Vec<f64>,
    pub kappa: Vec<f64>,
    pub r: Vec<usize>,
    pub m: Vec<usize>,
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    pub fn num_cells(&self) -> usize {
        self.alpha.len() * self.kappa.len() * self.r.len() * self.m.len() * self.modes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_cells() == 0 || self.seeds.is_empty() {
            return Err(Error::InvalidParams("sweep grid has an empty axis".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub cell: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub r: usize,
    pub m: usize,
    pub mode: Mode,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub alpha: f64,
    pub kappa: f64,
    pub r: usize,
    pub m: usize,
    pub mode: Mode,
    pub completed: usize,
    pub failed: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub qyd_err_mean: f64,
    pub qyd_err_std: f64,
}

/// Mean and sample standard deviation (`n - 1` denominator; zero for a
/// single value, NaN for none).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug)]
struct Job {
    cell: usize,
    alpha: f64,
    kappa: f64,
    r: usize,
    m: usize,
    mode: Mode,
    seed: u64,
}

/// Runs every grid cell for every seed. Cells run in parallel (at most
/// `jobs` threads when given); rows come back in grid order. A failing row
/// records its error and the sweep continues.
pub fn sweep(
    base: &ProblemParams,
    instance_cfg: &InstanceConfig,
    pipeline: &PipelineConfig,
    grid: &SweepGrid,
    jobs: Option<usize>,
) -> Result<(Vec<SweepRow>, Vec<SummaryRow>)> {
    grid.validate()?;
    let mut work = Vec::new();
    let mut cell = 0;
    for &alpha in &grid.alpha {
        for &kappa in &grid.kappa {
            for &r in &grid.r {
                for &m in &grid.m {
                    for &mode in &grid.modes {
                        for &seed in &grid.seeds {
                            work.push(Job { cell, alpha, kappa, r, m, mode, seed });
                        }
                        cell += 1;
                    }
                }
            }
        }
    }
    let run_one = |job: &Job| -> SweepRow {
        let params = ProblemParams {
            alpha: job.alpha,
            kappa_max: job.kappa,
            r: job.r,
            m: job.m,
            seed: job.seed,
            ..base.clone()
        };
        let outcome = make_block_instance(&params, instance_cfg)
            .and_then(|inst| run_pipeline(&inst, job.mode, &pipeline.reseeded(job.seed)));
        let (report, error) = match outcome {
            Ok(rep) => (Some(rep), None),
            Err(e) => (None, Some(e.to_string())),
        };
        SweepRow {
            cell: job.cell,
            alpha: job.alpha,
            kappa: job.kappa,
            r: job.r,
            m: job.m,
            mode: job.mode,
            seed: job.seed,
            report,
            error,
        }
    };
    let rows: Vec<SweepRow> = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidParams(format!("thread pool: {e}")))?
            .install(|| work.par_iter().map(run_one).collect()),
        None => work.par_iter().map(run_one).collect(),
    };

    let mut summary = Vec::with_capacity(cell);
    for c in 0..cell {
        let cell_rows: Vec<&SweepRow> = rows.iter().filter(|row| row.cell == c).collect();
        let first = cell_rows[0];
        let ok: Vec<&EvalReport> = cell_rows.iter().filter_map(|row| row.report.as_ref()).collect();
        let (acc_mean, acc_std) = mean_std(&ok.iter().map(|rep| rep.accuracy).collect::<Vec<_>>());
        let (qyd_err_mean, qyd_err_std) = mean_std(&ok.iter().map(|rep| rep.q_yd_error).collect::<Vec<_>>());
        summary.push(SummaryRow {
            alpha: first.alpha,
            kappa: first.kappa,
            r: first.r,
            m: first.m,
            mode: first.mode,
            completed: ok.len(),
            failed: cell_rows.len() - ok.len(),
            acc_mean,
            acc_std,
            qyd_err_mean,
            qyd_err_std,
        });
    }
    Ok((rows, summary))
}

pub const SUMMARY_HEADER: &str = "alpha,kappa,r,m,mode,acc_mean,acc_std,qyd_err_mean,qyd_err_std";

pub fn write_summary_csv<W: Write>(mut w: W, rows: &[SummaryRow]) -> std::io::Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for s in rows {
        writeln!(
            w,
            "{:?},{:?},{},{},{},{:?},{:?},{:?},{:?}",
            s.alpha, s.kappa, s.r, s.m, s.mode, s.acc_mean, s.acc_std, s.qyd_err_mean, s.qyd_err_std
        )?;
    }
    Ok(())
}

pub fn write_jsonl<W: Write, S: Serialize>(mut w: W, rows: &[S]) -> std::io::Result<()> {
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Predictions as `index,domain,y_pred,q1..qk`, using the domain-adjusted
/// posterior.
pub fn write_predictions_csv<W: Write>(mut w: W, k: usize, rows: &[IndexedPrediction]) -> std::io::Result<()> {
    write!(w, "index,domain,y_pred")?;
    for y in 1..=k {
        write!(w, ",q{y}")?;
    }
    writeln!(w)?;
    for row in rows {
        write!(w, "{},{},{}", row.index, row.domain, row.prediction.y_pred)?;
        for q in row.prediction.q_y_given_x_d.as_slice() {
            write!(w, ",{q:?}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_max(c: &[Vec<f64>]) -> f64 {
        fn rec(c: &[Vec<f64>], p: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if p == c.len() {
                *best = best.max(acc);
                return;
            }
            for t in 0..c.len() {
                if !used[t] {
                    used[t] = true;
                    rec(c, p + 1, used, acc + c[t][p], best);
                    used[t] = false;
                }
            }
        }
        let mut best = f64::NEG_INFINITY;
        rec(c, 0, &mut vec![false; c.len()], 0.0, &mut best);
        best
    }

    #[test]
    fn hungarian_examples() {
        let diag = vec![vec![5.0, 0.0, 0.0], vec![0.0, 3.0, 0.0], vec![0.0, 0.0, 2.0]];
        assert_eq!(hungarian_match(&diag).unwrap(), (vec![0, 1, 2], 1.0));
        let anti = vec![vec![0.0, 0.0, 4.0], vec![0.0, 1.0, 0.0], vec![7.0, 0.0, 0.0]];
        assert_eq!(hungarian_match(&anti).unwrap(), (vec![2, 1, 0], 1.0));
        assert!(matches!(hungarian_match(&[vec![1.0, 2.0]]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn hungarian_matches_brute_force_4x4() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let c: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..4).map(|_| rng.random_range(0..20) as f64).collect())
                .collect();
            if c.iter().flatten().sum::<f64>() == 0.0 {
                continue;
            }
            let (perm, acc) = hungarian_match(&c).unwrap();
            let total: f64 = c.iter().flatten().sum();
            let picked: f64 = perm.iter().enumerate().map(|(p, &t)| c[t][p]).sum();
            assert_eq!(picked, brute_force_max(&c));
            assert!((acc - picked / total).abs() < 1e-15);
        }
    }

    #[test]
    fn q_yd_error_examples() {
        let truth = StochasticMatrix::from_f64_rows(&[[0.17, 0.65], [0.83, 0.35]]).unwrap();
        let hat = StochasticMatrix::from_f64_rows(&[[0.2, 0.6], [0.8, 0.4]]).unwrap();
        assert!((q_yd_error(&hat, &truth, &[0, 1]).unwrap() - 0.04).abs() < 1e-12);
        assert_eq!(q_yd_error(&truth, &truth, &[0, 1]).unwrap(), 0.0);
        let swapped = truth.select_rows(&[1, 0]);
        assert_eq!(q_yd_error(&swapped, &truth, &[1, 0]).unwrap(), 0.0);
        assert!(q_yd_error(&swapped, &truth, &[0, 0]).is_err());
    }

    #[test]
    fn mean_std_is_sample_std() {
        let (m, s) = mean_std(&[0.9, 0.8, 1.0]);
        assert!((m - 0.9).abs() < 1e-12);
        assert!((s - 0.1).abs() < 1e-12);
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
    }

    #[test]
    fn mode_parsing() {
        for mode in [Mode::Oracle, Mode::Learned, Mode::Naive] {
            assert_eq!(mode.as_str().parse::<Mode>().unwrap(), mode);
        }
        assert!("supervised".parse::<Mode>().is_err());
    }

    #[test]
    fn summary_header_is_exact() {
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &[]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "alpha,kappa,r,m,mode,acc_mean,acc_std,qyd_err_mean,qyd_err_std\n"
        );
    }
}

//! Discretization of discriminator outputs: k-means clustering, exact
//! point-mass grouping for oracle outputs, and tabulation into the
//! cluster-given-domain matrix.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::simplex::StochasticMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KmeansConfig {
    pub niter: usize,
    pub nredo: usize,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self { niter: 100, nredo: 5 }
    }
}

/// Fitted centroids. Points are assigned to the nearest centroid in Euclidean
/// distance, lowest index on ties.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel<T> {
    centroids: Vec<Vec<T>>,
    inertia: T,
}

#[inline]
fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc = acc + d * d;
    }
    acc
}

fn nearest<T: Scalar>(centroids: &[Vec<T>], x: &[T]) -> (usize, T) {
    let mut best = 0;
    let mut best_d = T::infinity();
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(centroid, x);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    (best, best_d)
}

impl<T: Scalar> ClusterModel<T> {
    pub fn from_centroids(centroids: Vec<Vec<T>>) -> Result<Self> {
        if centroids.is_empty() || centroids.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("centroids must be non-empty and finite".into()));
        }
        Ok(Self {
            centroids,
            inertia: T::zero(),
        })
    }

    pub fn m(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[Vec<T>] {
        &self.centroids
    }

    /// Total within-cluster squared distance over the fitting points.
    pub fn inertia(&self) -> T {
        self.inertia
    }

    pub fn assign(&self, x: &[T]) -> usize {
        nearest(&self.centroids, x).0
    }

    pub fn assign_all<P: AsRef<[T]>>(&self, points: &[P]) -> Vec<usize> {
        points.iter().map(|p| self.assign(p.as_ref())).collect()
    }
}

/// Counts distinct points, stopping as soon as `needed` have been seen.
fn distinct_at_least<T: Scalar, P: AsRef<[T]>>(points: &[P], needed: usize) -> usize {
    let mut seen: Vec<&[T]> = Vec::with_capacity(needed);
    for p in points {
        let p = p.as_ref();
        if !seen.contains(&p) {
            seen.push(p);
            if seen.len() >= needed {
                break;
            }
        }
    }
    seen.len()
}

/// Lloyd's algorithm with k-means++ seeding; the restart with the smallest
/// inertia wins (earliest restart on ties).
pub fn kmeans<T: Scalar, P: AsRef<[T]>, R: Rng + ?Sized>(
    points: &[P],
    m: usize,
    niter: usize,
    nredo: usize,
    rng: &mut R,
) -> Result<ClusterModel<T>> {
    if m == 0 {
        return Err(Error::InvalidParams("cluster count must be positive".into()));
    }
    let dim = points.first().map_or(0, |p| p.as_ref().len());
    if points.iter().any(|p| p.as_ref().len() != dim) {
        return Err(Error::ShapeMismatch("points of unequal dimension".into()));
    }
    if points.iter().any(|p| p.as_ref().iter().any(|x| !x.is_finite())) {
        return Err(Error::InvalidInput("non-finite point".into()));
    }
    let found = distinct_at_least(points, m);
    if found < m {
        return Err(Error::InsufficientDistinctPoints { needed: m, found });
    }
    let mut best: Option<ClusterModel<T>> = None;
    for _ in 0..nredo.max(1) {
        let model = lloyd(points, m, niter, rng);
        if best.as_ref().is_none_or(|b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn kmeans_pp<T: Scalar, P: AsRef<[T]>, R: Rng + ?Sized>(
    points: &[P],
    m: usize,
    rng: &mut R,
) -> Vec<Vec<T>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].as_ref().to_vec()];
    let mut d2: Vec<T> = points
        .iter()
        .map(|p| sq_dist(p.as_ref(), &centroids[0]))
        .collect();
    while centroids.len() < m {
        let total = d2.iter().fold(T::zero(), |a, &b| a + b);
        let chosen = if total > T::zero() {
            let target = T::lit(rng.random::<f64>()) * total;
            let mut acc = T::zero();
            let mut idx = None;
            for (i, &w) in d2.iter().enumerate() {
                acc = acc + w;
                if w > T::zero() && acc > target {
                    idx = Some(i);
                    break;
                }
            }
            // Rounding can leave target beyond the final partial sum.
            idx.unwrap_or_else(|| d2.iter().rposition(|&w| w > T::zero()).expect("positive mass"))
        } else {
            rng.random_range(0..n)
        };
        let c = points[chosen].as_ref().to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            let nd = sq_dist(p.as_ref(), &c);
            if nd < *d {
                *d = nd;
            }
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd<T: Scalar, P: AsRef<[T]>, R: Rng + ?Sized>(
    points: &[P],
    m: usize,
    niter: usize,
    rng: &mut R,
) -> ClusterModel<T> {
    let dim = points[0].as_ref().len();
    let mut centroids = kmeans_pp(points, m, rng);
    let mut assignment = vec![usize::MAX; points.len()];
    let mut dists = vec![T::zero(); points.len()];

    for _ in 0..niter.max(1) {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(&centroids, p.as_ref());
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
            dists[i] = d;
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![T::zero(); dim]; m];
        let mut counts = vec![0usize; m];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, &x) in sums[c].iter_mut().zip(p.as_ref()) {
                *s = *s + x;
            }
        }
        for c in 0..m {
            if counts[c] > 0 {
                let n = T::lit(counts[c] as f64);
                centroids[c] = sums[c].iter().map(|&s| s / n).collect();
            }
        }
        // Reseed empty clusters at the point farthest from its centroid.
        for c in 0..m {
            if counts[c] == 0 {
                let (far, _) = dists
                    .iter()
                    .enumerate()
                    .fold((0, T::neg_infinity()), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
                centroids[c] = points[far].as_ref().to_vec();
                dists[far] = T::zero();
                assignment[far] = c;
            }
        }
    }

    let mut inertia = T::zero();
    for p in points {
        inertia = inertia + nearest(&centroids, p.as_ref()).1;
    }
    ClusterModel { centroids, inertia }
}

/// Result of grouping exact discriminator outputs into point masses.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMassGroups<T> {
    /// Group of every input point; labelled groups come first, the residual
    /// group has index `m - 1`.
    pub ids: Vec<usize>,
    /// Empirical mass per group (length `m`).
    pub masses: Vec<f64>,
    /// Representative value of each labelled group.
    pub representatives: Vec<Vec<T>>,
    pub m: usize,
}

impl<T> PointMassGroups<T> {
    pub fn num_labelled(&self) -> usize {
        self.representatives.len()
    }
}

/// Groups points equal within `match_tol` (sup norm). Groups whose empirical
/// mass `count / n_total` reaches `epsilon` become labelled groups in order of
/// first appearance; every other point goes to one residual group.
pub fn oracle_point_mass_groups<T: Scalar, P: AsRef<[T]>>(
    points: &[P],
    epsilon: f64,
    n_total: usize,
    match_tol: f64,
) -> PointMassGroups<T> {
    let tol = T::lit(match_tol);
    let mut reps: Vec<&[T]> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut raw = Vec::with_capacity(points.len());
    for p in points {
        let p = p.as_ref();
        let found = reps.iter().position(|rep| {
            rep.iter().zip(p).all(|(&a, &b)| (a - b).abs() <= tol)
        });
        let g = match found {
            Some(g) => g,
            None => {
                reps.push(p);
                counts.push(0);
                reps.len() - 1
            }
        };
        counts[g] += 1;
        raw.push(g);
    }
    let n_total = n_total.max(1) as f64;
    let mut relabel = vec![usize::MAX; reps.len()];
    let mut representatives = Vec::new();
    let mut masses = Vec::new();
    for (g, &c) in counts.iter().enumerate() {
        let mass = c as f64 / n_total;
        if mass >= epsilon {
            relabel[g] = representatives.len();
            representatives.push(reps[g].to_vec());
            masses.push(mass);
        }
    }
    let residual = representatives.len();
    let residual_mass = counts
        .iter()
        .zip(&relabel)
        .filter(|(_, &l)| l == usize::MAX)
        .map(|(&c, _)| c as f64 / n_total)
        .sum();
    masses.push(residual_mass);
    let ids = raw
        .into_iter()
        .map(|g| if relabel[g] == usize::MAX { residual } else { relabel[g] })
        .collect();
    PointMassGroups {
        ids,
        masses,
        representatives,
        m: residual + 1,
    }
}

/// Cluster-by-domain count table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TabularCounts {
    /// `counts[a][b]`: points of domain `b` in cluster `a`.
    pub counts: Vec<Vec<usize>>,
    pub domain_totals: Vec<usize>,
}

/// Tabulates cluster ids against domains and returns the counts together
/// with the empirical cluster-given-domain matrix (`m x r`).
pub fn tabularize<T: Scalar>(
    cluster_ids: &[usize],
    domains: &[usize],
    m: usize,
    r: usize,
) -> Result<(TabularCounts, StochasticMatrix<T>)> {
    if cluster_ids.len() != domains.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} cluster ids for {} domains",
            cluster_ids.len(),
            domains.len()
        )));
    }
    let mut counts = vec![vec![0usize; r]; m];
    let mut totals = vec![0usize; r];
    for (&c, &d) in cluster_ids.iter().zip(domains) {
        if c >= m || d >= r {
            return Err(Error::InvalidInput(format!(
                "cluster {c} or domain {d} outside {m}x{r} table"
            )));
        }
        counts[c][d] += 1;
        totals[d] += 1;
    }
    if let Some(b) = totals.iter().position(|&t| t == 0) {
        return Err(Error::EmptyDomain(b));
    }
    let q = Matrix::from_fn(m, r, |a, b| {
        T::lit(counts[a][b] as f64) / T::lit(totals[b] as f64)
    });
    Ok((
        TabularCounts {
            counts,
            domain_totals: totals,
        },
        StochasticMatrix::from_normalized(q),
    ))
}

/// Writes `index,cluster,domain` rows.
pub fn write_assignments_csv<W: Write>(
    mut w: W,
    indices: &[usize],
    clusters: &[usize],
    domains: &[usize],
) -> std::io::Result<()> {
    writeln!(w, "index,cluster,domain")?;
    for ((i, c), d) in indices.iter().zip(clusters).zip(domains) {
        writeln!(w, "{i},{c},{d}")?;
    }
    Ok(())
}

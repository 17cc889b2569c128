//! Label posteriors from recovered label marginals.
//!
//! With `Q_{D|Y}` obtained from `Q_{Y|D}` by transposing and normalizing
//! columns, the domain posterior satisfies `q(d|x) = Q_{D|Y} q(y|x)`, so the
//! class posterior is the (least-squares) solution of that system. The
//! domain-specific posterior then follows from `q(y|x,d) ∝ q(d|y) q(y|x)`.

use rand::Rng;
use serde::Serialize;

use crate::discretize::{kmeans, tabularize, ClusterModel, KmeansConfig, TabularCounts};
use crate::error::{Error, Result};
use crate::factorize::{nmf, NmfConfig};
use crate::linalg::{pseudo_inverse_solve, Matrix};
use crate::scalar::{argmax, Scalar};
use crate::simplex::{SimplexVec, StochasticMatrix};

/// Class-given-domain to domain-given-class: transpose, then normalize each
/// column. Fails with [`Error::ZeroRow`] if some class never occurs.
pub fn q_d_given_y<T: Scalar>(q_yd: &StochasticMatrix<T>) -> Result<StochasticMatrix<T>> {
    let m = q_yd.matrix();
    let sums = m.row_sums();
    if let Some(y) = sums.iter().position(|&s| !(s > T::zero())) {
        return Err(Error::ZeroRow(y));
    }
    let out = Matrix::from_fn(m.cols(), m.rows(), |d, y| m[(y, d)] / sums[y]);
    Ok(StochasticMatrix::from_normalized(out))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction<T: Scalar> {
    /// Estimated `q(y|x)`.
    pub q_y_given_x: SimplexVec<T>,
    /// Estimated `q(y|x,d)` for the requested domain.
    pub q_y_given_x_d: SimplexVec<T>,
    pub y_pred: usize,
}

/// Prepared solver for repeated predictions against one `Q_{Y|D}` estimate.
#[derive(Clone, Debug)]
pub struct Adjuster<T: Scalar> {
    q_dy: StochasticMatrix<T>,
}

impl<T: Scalar> Adjuster<T> {
    pub fn new(q_yd_hat: &StochasticMatrix<T>) -> Result<Self> {
        Ok(Self {
            q_dy: q_d_given_y(q_yd_hat)?,
        })
    }

    pub fn q_dy(&self) -> &StochasticMatrix<T> {
        &self.q_dy
    }

    /// Unclipped least-squares class coefficients for a domain posterior.
    pub fn raw_class_coefficients(&self, f_x: &[T]) -> Result<Vec<T>> {
        pseudo_inverse_solve(self.q_dy.matrix(), f_x)
    }

    pub fn predict(&self, f_x: &SimplexVec<T>, domain: usize) -> Result<Prediction<T>> {
        let r = self.q_dy.rows();
        if f_x.dim() != r {
            return Err(Error::ShapeMismatch(format!(
                "domain posterior of length {} for {r} domains",
                f_x.dim()
            )));
        }
        if domain >= r {
            return Err(Error::InvalidInput(format!("domain {domain} outside 0..{r}")));
        }
        let raw = self.raw_class_coefficients(f_x.as_slice())?;
        let clipped: Vec<T> = raw.into_iter().map(|g| g.max(T::zero())).collect();
        let g = SimplexVec::from_weights(clipped).map_err(|_| Error::UndefinedPosterior)?;
        let weights: Vec<T> = g
            .as_slice()
            .iter()
            .enumerate()
            .map(|(y, &gy)| self.q_dy.get(domain, y) * gy)
            .collect();
        let adjusted = SimplexVec::from_weights(weights).map_err(|_| Error::UndefinedPosterior)?;
        let y_pred = adjusted.argmax();
        Ok(Prediction {
            q_y_given_x: g,
            q_y_given_x_d: adjusted,
            y_pred,
        })
    }
}

/// One-shot form of [`Adjuster::predict`].
pub fn adjust_predict<T: Scalar>(
    q_yd_hat: &StochasticMatrix<T>,
    f_x: &SimplexVec<T>,
    domain: usize,
) -> Result<Prediction<T>> {
    Adjuster::new(q_yd_hat)?.predict(f_x, domain)
}

/// Cluster-level posterior
/// `q(y|c,d) ∝ q(c|y) q(y|d)` used when the representation carries no
/// domain-posterior meaning.
pub fn naive_predict<T: Scalar>(
    w_hat: &StochasticMatrix<T>,
    h_hat: &StochasticMatrix<T>,
    cluster: usize,
    domain: usize,
) -> Result<Prediction<T>> {
    if w_hat.cols() != h_hat.rows() {
        return Err(Error::ShapeMismatch(format!(
            "W has {} classes, H has {}",
            w_hat.cols(),
            h_hat.rows()
        )));
    }
    if cluster >= w_hat.rows() || domain >= h_hat.cols() {
        return Err(Error::InvalidInput(format!(
            "cluster {cluster} or domain {domain} out of range"
        )));
    }
    let k = w_hat.cols();
    let weights: Vec<T> = (0..k)
        .map(|y| w_hat.get(cluster, y) * h_hat.get(y, domain))
        .collect();
    let posterior = SimplexVec::from_weights(weights).map_err(|_| Error::UndefinedPosterior)?;
    let y_pred = argmax(posterior.as_slice());
    Ok(Prediction {
        q_y_given_x: posterior.clone(),
        q_y_given_x_d: posterior,
        y_pred,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NaiveConfig {
    pub kmeans: KmeansConfig,
    pub nmf: NmfConfig,
}

/// Everything the cluster-level predictor keeps from training.
#[derive(Clone, Debug)]
pub struct NaiveModel<T: Scalar> {
    pub clusters: ClusterModel<T>,
    pub counts: TabularCounts,
    pub w_hat: StochasticMatrix<T>,
    pub h_hat: StochasticMatrix<T>,
}

impl<T: Scalar> NaiveModel<T> {
    pub fn predict(&self, representation: &[T], domain: usize) -> Result<Prediction<T>> {
        naive_predict(&self.w_hat, &self.h_hat, self.clusters.assign(representation), domain)
    }
}

/// Clusters an arbitrary representation into `m` groups, tabulates against
/// domains, and factorizes with `k` classes, keeping the clustering and both
/// factors for prediction.
#[allow(clippy::too_many_arguments)]
pub fn naive_train<T: Scalar, P: AsRef<[T]>, R: Rng + ?Sized>(
    representation: &[P],
    domains: &[usize],
    m: usize,
    r: usize,
    k: usize,
    cfg: &NaiveConfig,
    rng: &mut R,
) -> Result<NaiveModel<T>> {
    let clusters = kmeans(representation, m, cfg.kmeans.niter, cfg.kmeans.nredo, rng)?;
    let ids = clusters.assign_all(representation);
    let (counts, q_cd) = tabularize::<T>(&ids, domains, m, r)?;
    let fact = nmf(&q_cd, k, &cfg.nmf, rng)?;
    Ok(NaiveModel {
        clusters,
        counts,
        w_hat: fact.w_hat,
        h_hat: fact.h_hat,
    })
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of a latent-label-shift problem instance and of its discretization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemParams {
    /// Number of latent classes.
    pub k: usize,
    /// Number of observed domains.
    pub r: usize,
    /// Dirichlet concentration for per-domain label marginals.
    pub alpha: f64,
    /// Largest accepted 2-norm condition number of the label-marginal matrix.
    pub kappa_max: f64,
    /// Lower bound on the probability mass of each anchor region.
    pub epsilon: f64,
    /// Cluster count used by the discretization step.
    pub m: usize,
    pub seed: u64,
}

impl Default for ProblemParams {
    fn default() -> Self {
        Self {
            k: 3,
            r: 6,
            alpha: 0.5,
            kappa_max: 4.0,
            epsilon: 0.1,
            m: 9,
            seed: 0,
        }
    }
}

impl ProblemParams {
    pub fn validate(&self) -> Result<()> {
        self.validate_generation()?;
        if self.m < self.k {
            return Err(Error::InvalidParams(format!(
                "cluster count m={} must be at least k={}",
                self.m, self.k
            )));
        }
        Ok(())
    }

    /// Validation for everything except the cluster count, which the
    /// cluster-count ablation deliberately pushes below `k`.
    pub fn validate_generation(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParams("k must be positive".into()));
        }
        if self.r < self.k {
            return Err(Error::InvalidParams(format!(
                "need at least as many domains as classes (r={}, k={})",
                self.r, self.k
            )));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParams(format!("alpha={} must be positive", self.alpha)));
        }
        if !(self.kappa_max >= 1.0) {
            return Err(Error::InvalidParams(format!(
                "kappa_max={} must be at least 1",
                self.kappa_max
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParams(format!(
                "epsilon={} must lie in (0, 1)",
                self.epsilon
            )));
        }
        if self.m == 0 {
            return Err(Error::InvalidParams("m must be positive".into()));
        }
        Ok(())
    }
}

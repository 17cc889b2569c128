//! Run configuration document.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use lls_core::eval::{Mode, PipelineConfig, SweepGrid};
use lls_core::selftest::SelftestConfig;
use lls_core::synthgen::InstanceConfig;
use lls_core::ProblemParams;
use serde::{Deserialize, Serialize};

/// Every key is optional and falls back to its default; unknown keys are
/// rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Problem size, generation bounds, cluster count and generation seed.
    pub params: ProblemParams,
    /// Block layout, sample sizes and split fractions.
    pub instance: InstanceConfig,
    /// Discriminator training, clustering, factorization and pipeline seed.
    pub pipeline: PipelineConfig,
    /// Pipeline mode for `run`.
    pub mode: Mode,
    /// Grid for `sweep`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<SweepGrid>,
    pub selftest: SelftestConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Applies a `--seed` override to every seed the commands use.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(seed) = seed {
            self.params.seed = seed;
            self.pipeline = self.pipeline.reseeded(seed);
            self.selftest.seed = seed;
        }
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is rank deficient (condition number {condition:e})")]
    RankDeficient { condition: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("column {0} has zero sum")]
    ZeroColumn(usize),

    #[error("row {0} has zero sum")]
    ZeroRow(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("not a probability vector: {0}")]
    InvalidSimplex(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("generation budget exhausted after {attempts} attempts (best condition number {best_condition:.4})")]
    GenerationBudgetExceeded { attempts: usize, best_condition: f64 },

    #[error("point lies outside the support of every class")]
    OutOfSupport,

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("need at least {needed} distinct points, found {found}")]
    InsufficientDistinctPoints { needed: usize, found: usize },

    #[error("domain {0} has no samples")]
    EmptyDomain(usize),

    #[error("invalid rank k={k} for a {rows}x{cols} matrix")]
    InvalidRank { k: usize, rows: usize, cols: usize },

    #[error("only {found} of {needed} anchors could be selected")]
    AnchorDeficient { found: usize, needed: usize },

    #[error("posterior undefined: every class has zero weight")]
    UndefinedPosterior,

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}

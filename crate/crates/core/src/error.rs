use thiserror::Error;

pub type Result<T> = std::result::Result<T, SparlowError>;

#[derive(Debug, Error)]
pub enum SparlowError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("singular retraction step: ‖d + tξ‖ = {norm:e}")]
    SingularStep { norm: f64 },

    #[error("QR factorization failed: {0}")]
    Factorization(String),

    #[error("sparse coding did not converge after {iters} sweeps (KKT residual {residual:e})")]
    Convergence { iters: usize, residual: f64 },

    #[error("sparse coding failed for {} sample(s), first at index {}", .failures.len(), .failures[0].0)]
    BatchConvergence { failures: Vec<(usize, f64)> },

    #[error("coherence barrier out of domain: |d_{i}ᵀd_{j}| = {value}")]
    BarrierDomain { i: usize, j: usize, value: f64 },

    #[error("trace quotient denominator not positive: {0:e}")]
    Guard(f64),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("cannot seed {wanted} atoms from {available} distinct columns")]
    Seeding { wanted: usize, available: usize },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("sample {index} has zero norm")]
    ZeroNorm { index: usize },

    #[error("optimizer failed at iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<SparlowError>,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<SparlowError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SparlowError {
    /// Tag an error with the pipeline stage that produced it.
    pub fn at_stage(self, stage: &'static str) -> Self {
        SparlowError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            SparlowError::Stage { source, .. } | SparlowError::Iteration { source, .. } => source.exit_code(),
            SparlowError::Dimension(_)
            | SparlowError::Validation(_)
            | SparlowError::DegenerateLabels(_)
            | SparlowError::Seeding { .. }
            | SparlowError::ZeroNorm { .. }
            | SparlowError::Parse { .. } => 2,
            SparlowError::Io(_) => 4,
            _ => 3,
        }
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}

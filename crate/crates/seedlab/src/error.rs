use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty or zero-sized shape")]
    EmptyShape,

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate scale: 1 + eta_s = {0} must be positive")]
    DegenerateScale(f64),

    #[error("arrangement block {eta_a} exceeds spatial dims {dims:?}")]
    ArrangementBlock { eta_a: usize, dims: Vec<usize> },

    #[error("no closed form for this shift kind; use quadrature")]
    NoClosedForm,

    #[error("quadrature did not converge; achieved tolerance {achieved:e}")]
    QuadratureNonConvergence { achieved: f64 },

    #[error("degenerate projection: point set has no principal direction")]
    DegenerateProjection,

    #[error("unknown class index {class} (dataset has {num_classes} classes)")]
    Condition { class: usize, num_classes: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("variance head required but absent from the network")]
    MissingVarianceHead,

    #[error("training diverged (non-finite loss) at step {step}")]
    TrainingDiverged { step: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse: {0}")]
    TomlParse(String),
}

impl Error {
    /// Stable machine-readable tag for the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyShape => "empty_shape",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::Parameter(_) => "parameter",
            Error::DegenerateScale(_) => "degenerate_scale",
            Error::ArrangementBlock { .. } => "arrangement_block",
            Error::NoClosedForm => "no_closed_form",
            Error::QuadratureNonConvergence { .. } => "quadrature_non_convergence",
            Error::DegenerateProjection => "degenerate_projection",
            Error::Condition { .. } => "condition",
            Error::Config(_) => "config",
            Error::MissingVarianceHead => "missing_variance_head",
            Error::TrainingDiverged { .. } => "training_diverged",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::CheckpointMismatch(_) => "checkpoint_mismatch",
            Error::Dependency(_) => "dependency",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::TomlParse(_) => "config_parse",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

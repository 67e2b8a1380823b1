use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operation not supported: {0}")]
    Unsupported(String),

    #[error("degenerate criterion: {0}")]
    DegenerateCriterion(String),

    #[error("non-finite value in flow layer {layer}: {what}")]
    FlowNumeric { layer: usize, what: &'static str },

    #[error("non-finite {term} term in the variational objective")]
    NonFiniteTerm { term: &'static str },

    #[error("objective diverged at step {step}")]
    Diverged { step: usize, trace: Vec<f64> },

    #[error("criterion is flat under the current model (variance {variance:e}); beta has no effect")]
    FlatCriterion { variance: f64 },

    #[error("rare event: {accepted} of {requested} samples accepted after {attempts} attempts")]
    RareEvent {
        requested: usize,
        accepted: usize,
        attempts: u64,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

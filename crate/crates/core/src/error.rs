use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("schedule construction failed at index {index}: {reason}")]
    Schedule { index: usize, reason: String },

    #[error("step index {index} outside {min}..={max}")]
    StepOutOfRange { index: usize, min: usize, max: usize },

    #[error("negative radicand {value:e} in transition coefficients")]
    NegativeRadicand { value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("all component densities vanish at step {step}")]
    DegenerateDensity { step: usize },

    #[error("unknown vocabulary label `{0}`")]
    Vocabulary(String),

    #[error("non-finite state at step {step}")]
    Divergence { step: usize },

    #[error("zero-length direction: {0}")]
    ZeroDirection(&'static str),

    #[error("grid oracle needs {needed} evaluations, budget is {budget}")]
    OracleBudget { needed: f64, budget: u64 },

    #[error("corrections were computed with guidance {track} but the world uses {world}")]
    GuidanceMismatch { track: f64, world: f64 },

    #[error("finite-difference probe {index} failed: {source}")]
    Probe {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for numerical blow-ups: non-finite states or a density that
    /// underflows everywhere. Probe failures are classified by their cause.
    pub fn is_divergence(&self) -> bool {
        match self {
            Error::Divergence { .. } | Error::DegenerateDensity { .. } => true,
            Error::Probe { source, .. } => source.is_divergence(),
            _ => false,
        }
    }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PainleveError>;

/// Every message starts with the variant name so callers can grep for it.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PainleveError {
    #[error("UnsupportedRank: affine Cartan matrix needs rank >= 2, got {0}")]
    UnsupportedRank(usize),
    #[error("DimensionError: size {left} vs {right}")]
    DimensionError { left: usize, right: usize },
    #[error("UnsupportedIndex: {0}")]
    UnsupportedIndex(String),
    #[error("SingularTime: {0}")]
    SingularTime(String),
    #[error("ConstraintViolation: {0}")]
    ConstraintViolation(String),
    #[error("MissingAux: {0}")]
    MissingAux(String),
    #[error("GaugeSingularity: {0} vanishes")]
    GaugeSingularity(&'static str),
    #[error("DenominatorVanishes: r_{reflection} needs {expr} != 0")]
    DenominatorVanishes { reflection: usize, expr: String },
    #[error("at word position {position}: {source}")]
    InWord {
        position: usize,
        #[source]
        source: Box<PainleveError>,
    },
    #[error("SingularityApproach: {what} below the guard at t = {t}")]
    SingularityApproach { t: f64, what: String },
    #[error("StepUnderflow: step {h:e} at t = {t}")]
    StepUnderflow { t: f64, h: f64 },
    #[error("InvalidInput: {0}")]
    InvalidInput(String),
}

impl PainleveError {
    /// Domain errors are the ones the CLI maps to exit code 3.
    pub fn is_domain(&self) -> bool {
        !matches!(self, PainleveError::InvalidInput(_) | PainleveError::DimensionError { .. })
    }
}

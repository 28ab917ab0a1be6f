use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("search space has {count} genotypes, above the enumeration cap of {cap}")]
    EnumerationCapExceeded { count: u128, cap: u64 },

    #[error("genotype does not belong to this search space: {0}")]
    SpaceMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss")]
    NonFiniteLoss,

    #[error("non-finite gradient at step {step} ({param})")]
    NonFiniteGradient { step: usize, param: String },

    #[error("zero-norm weight vector")]
    ZeroVector,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("rank correlation undefined: {0}")]
    Undefined(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown split {0:?}")]
    UnknownSplit(String),

    #[error("empty history")]
    EmptyHistory,

    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),

    #[error("genotype sets differ: {0}")]
    GenotypeSetMismatch(String),

    #[error("scoring failed for {genotype}: {source}")]
    Scoring {
        genotype: String,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

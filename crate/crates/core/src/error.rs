use thiserror::Error;

/// Errors produced by table construction, model handling and the fitting engines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("length mismatch: schema has {expected} cells but {got} values were given")]
    LengthMismatch { expected: usize, got: usize },

    #[error("all-zero counts")]
    AllZeroCounts,

    #[error("negative count {value} at cell {cell}")]
    NegativeCount { cell: usize, value: i64 },

    #[error("cell {cell} holds {value}, expected a finite nonnegative value")]
    InvalidValue { cell: usize, value: f64 },

    #[error("table total is zero")]
    ZeroTotal,

    #[error("table is not normalized (total = {0})")]
    NotNormalized(f64),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid generating class: {0}")]
    InvalidModel(String),

    #[error("generating class is not decomposable")]
    NotDecomposable,

    #[error("decomposable generating class is not connected")]
    Disconnected,

    #[error("spanning family rejected: {0}")]
    InvalidSpanning(String),

    #[error("inconsistent marginals: {0}")]
    InconsistentMarginals(String),

    #[error("zero separator marginal under a nonzero numerator")]
    ZeroSeparator,

    #[error("support mismatch: target marginal on {set} is positive where the iterate marginal is zero")]
    SupportMismatch { set: String },

    #[error("marginals already match the targets; no scaling root exists")]
    AlreadyFitted,

    #[error("normalizing exponent is below numerical resolution")]
    Unresolved,

    #[error("root search failed: {0}")]
    NoRoot(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid cycle model: {0}")]
    Cycle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

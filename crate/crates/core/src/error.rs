use thiserror::Error;

/// Errors produced by the `noisefair` library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("input file is empty")]
    EmptyFile,

    #[error("column `{0}` named in schema is missing from the header")]
    MissingColumn(String),

    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow { row: usize, expected: usize, found: usize },

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    NonNumeric { row: usize, column: String, value: String },

    #[error("row {row}, column `{column}`: missing value")]
    MissingValue { row: usize, column: String },

    #[error("row {row}: label column has a third symbol `{symbol}` (already saw {seen:?})")]
    TooManyLabelSymbols { row: usize, symbol: String, seen: Vec<String> },

    #[error("label symbols {0:?} do not include the declared positive symbol")]
    UnmappedLabels(Vec<String>),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid noise rates for group {group}: eps_plus={eps_plus}, eps_minus={eps_minus}")]
    InvalidNoise { group: String, eps_plus: f64, eps_minus: f64 },

    #[error("noise spec does not cover group `{0}`")]
    MissingGroupNoise(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("stratum (group {group}, label {label:+}) has {size} examples but {needed} partitions were requested")]
    Stratification { group: usize, label: i8, size: usize, needed: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("group {group} has no examples with noisy label {label:+}; threshold undefined")]
    ThresholdUndefined { group: usize, label: i8 },

    #[error("noise estimation is degenerate for group {0}")]
    EstimationDegenerate(usize),

    #[error("group {0} has a single example; peer sampling needs at least two")]
    SingletonGroup(usize),

    #[error("group {group} has no examples with label {label:+}")]
    DegenerateGroup { group: usize, label: i8 },

    #[error("at least two groups are required")]
    TooFewGroups,

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("model has {found} weights but the dataset has {expected} feature columns")]
    FeatureCountMismatch { expected: usize, found: usize },

    #[error("no candidates to select from")]
    NoCandidates,

    #[error("every alpha grid point failed to train")]
    AllGridPointsFailed,

    #[error("covariance for cluster {0} is not positive definite")]
    NotPositiveDefinite(String),

    #[error("world does not satisfy the hypothesis: {0}")]
    HypothesisViolation(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

/// Everything that can go wrong between reading a CSV and reporting an AUC.
///
/// Variants split into two families: input/contract violations (bad files,
/// missing data, an estimator asked for data it cannot use) and numerical
/// failures (solvers that diverge or hit a singular system). See
/// [`Error::is_numerical`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("missing column(s): {0:?}")]
    MissingColumn(Vec<String>),

    #[error("row {row}, column `{column}`: cannot parse {value:?} as {expected}")]
    BadValue {
        row: usize,
        column: String,
        value: String,
        expected: &'static str,
    },

    #[error("cohort has no usable rows")]
    EmptyCohort,

    #[error("response indicator is constant ({0}); both responders and non-responders are required")]
    DegenerateResponse(u8),

    #[error("covariate schemas differ: {0:?}")]
    SchemaMismatch(Vec<String>),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("summary statistics missing: {0}")]
    MissingSummary(String),

    #[error("index out of range: ({0}, {1})")]
    IndexOutOfRange(usize, usize),

    #[error("estimator `{estimator}` requires {requirement}")]
    RequirementUnmet {
        estimator: String,
        requirement: &'static str,
    },

    #[error("no responder/non-responder pairs with positive weight")]
    NoPairs,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("target moments lie outside the convex hull of the cohort features (|lambda| = {0:.3e})")]
    InfeasibleTarget(f64),

    #[error("{solver} did not converge within {iterations} iterations")]
    MaxIterations { solver: &'static str, iterations: usize },

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("complete or quasi-complete separation in sampling model")]
    SeparationDetected,

    #[error("singular design matrix in sampling model")]
    SingularDesign,

    #[error("rank-deficient outcome design for response group {group}")]
    RankDeficientDesign { group: u8 },

    #[error("response group {group} has {n} subjects but {p} parameters")]
    GroupTooSmall { group: u8, n: usize, p: usize },

    #[error("non-finite sampling weight at row {0}")]
    NonFiniteWeight(usize),

    #[error("both residual variances are zero; the pairwise probability is degenerate")]
    DegenerateVariance,

    #[error("{failed} of {total} bootstrap resamples failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of an otherwise well-posed computation.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::InfeasibleTarget(_)
                | Error::MaxIterations { .. }
                | Error::NumericalBreakdown(_)
                | Error::SeparationDetected
                | Error::SingularDesign
                | Error::RankDeficientDesign { .. }
                | Error::NonFiniteWeight(_)
                | Error::DegenerateVariance
                | Error::TooManyFailures { .. }
        )
    }

    /// Stable machine-readable tag, used in JSON error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) => "MissingColumn",
            Error::BadValue { .. } => "BadValue",
            Error::EmptyCohort => "EmptyCohort",
            Error::DegenerateResponse(_) => "DegenerateResponse",
            Error::SchemaMismatch(_) => "SchemaMismatch",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::MissingSummary(_) => "MissingSummary",
            Error::IndexOutOfRange(..) => "IndexOutOfRange",
            Error::RequirementUnmet { .. } => "RequirementUnmet",
            Error::NoPairs => "NoPairs",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::InfeasibleTarget(_) => "InfeasibleTarget",
            Error::MaxIterations { .. } => "MaxIterations",
            Error::NumericalBreakdown(_) => "NumericalBreakdown",
            Error::SeparationDetected => "SeparationDetected",
            Error::SingularDesign => "SingularDesign",
            Error::RankDeficientDesign { .. } => "RankDeficientDesign",
            Error::GroupTooSmall { .. } => "GroupTooSmall",
            Error::NonFiniteWeight(_) => "NonFiniteWeight",
            Error::DegenerateVariance => "DegenerateVariance",
            Error::TooManyFailures { .. } => "TooManyFailures",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

/// Errors raised by the library. Every variant maps to a stable,
/// machine-parsable code via [`Error::code`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("panel is unbalanced: missing outcome for group `{group}` at period `{period}`")]
    Unbalanced { group: String, period: String },
    #[error("panel has no treated group")]
    NoTreated,
    #[error("panel has no control group")]
    NoControl,
    #[error("bad treatment start for group `{group}`: {reason}")]
    BadTStar { group: String, reason: String },
    #[error("empty {0} window")]
    EmptyWindow(&'static str),
    #[error("pre and post windows overlap at period index {0}")]
    OverlappingWindow(usize),
    #[error("period index {index} out of range for a panel with {periods} periods")]
    PeriodOutOfRange { index: usize, periods: usize },
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("schema error: missing columns {0:?}")]
    Schema(Vec<String>),
    #[error("empty cell for group `{group}` at period `{period}`")]
    EmptyCell { group: String, period: String },
    #[error("data not found: {0}")]
    DataNotFound(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("stationary initialisation requires |rho| < 1, got {0}")]
    BadRho(f64),
    #[error("paired structure requires an even number of groups per arm (treated {n1}, control {n0})")]
    OddArm { n1: usize, n0: usize },
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("treatment timing is staggered; use switcher_did or long_difference")]
    StaggeredUnsupported,
    #[error("no comparison group available at switch period {0}")]
    NoComparisonGroup(usize),
    #[error("horizon {horizon} unavailable for cohort switching after period {cohort}")]
    HorizonUnavailable { cohort: usize, horizon: usize },
    #[error("pre-test period {0} is not a pre-treatment period")]
    PostPeriodInPretest(usize),
    #[error("too few clusters: {n_treated} treated, {n_control} control (need at least 2 each)")]
    TooFewClusters { n_treated: usize, n_control: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("T must be even to split into pre/post halves, got {0}")]
    BadT(usize),
    #[error("zero noise denominator")]
    ZeroNoise,
    #[error("too few blocks: need more than 2, got {0}")]
    TooFewBlocks(usize),
    #[error("target rejection {target} cannot be bracketed (rejection at zero factor variance is {at_zero})")]
    NoBracket { target: f64, at_zero: f64 },
    #[error("invalid covariance matrix: {0}")]
    BadCov(String),
    #[error("no admissible placebo design cells")]
    NoCells,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("replication {index} failed: {source}")]
    Replication { index: usize, source: Box<Error> },
}

impl Error {
    /// Stable identifier suitable for scripts and logs.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Unbalanced { .. } => "UNBALANCED",
            Error::NoTreated => "NO_TREATED",
            Error::NoControl => "NO_CONTROL",
            Error::BadTStar { .. } => "BAD_TSTAR",
            Error::EmptyWindow(_) => "EMPTY_WINDOW",
            Error::OverlappingWindow(_) => "OVERLAPPING_WINDOW",
            Error::PeriodOutOfRange { .. } => "PERIOD_OUT_OF_RANGE",
            Error::Parse { .. } => "PARSE_ERROR",
            Error::Schema(_) => "SCHEMA_ERROR",
            Error::EmptyCell { .. } => "EMPTY_CELL",
            Error::DataNotFound(_) => "DATA_NOT_FOUND",
            Error::Io(_) => "IO_ERROR",
            Error::BadRho(_) => "BAD_RHO",
            Error::OddArm { .. } => "ODD_ARM",
            Error::InvalidSpec(_) => "INVALID_SPEC",
            Error::StaggeredUnsupported => "STAGGERED_UNSUPPORTED",
            Error::NoComparisonGroup(_) => "NO_COMPARISON_GROUP",
            Error::HorizonUnavailable { .. } => "HORIZON_UNAVAILABLE",
            Error::PostPeriodInPretest(_) => "POST_PERIOD_IN_PRETEST",
            Error::TooFewClusters { .. } => "TOO_FEW_CLUSTERS",
            Error::DimMismatch(_) => "DIM_MISMATCH",
            Error::BadT(_) => "BAD_T",
            Error::ZeroNoise => "ZERO_NOISE",
            Error::TooFewBlocks(_) => "TOO_FEW_BLOCKS",
            Error::NoBracket { .. } => "NO_BRACKET",
            Error::BadCov(_) => "BAD_COV",
            Error::NoCells => "NO_CELLS",
            Error::Config(_) => "CONFIG_ERROR",
            Error::Replication { source, .. } => source.code(),
        }
    }

    /// Coarse classification used by the command-line front end.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::BadRho(_)
            | Error::ZeroNoise
            | Error::NoBracket { .. }
            | Error::TooFewClusters { .. }
            | Error::BadCov(_) => ErrorKind::Numeric,
            Error::Config(_) => ErrorKind::Usage,
            Error::Replication { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

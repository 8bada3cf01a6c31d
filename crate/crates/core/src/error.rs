use thiserror::Error;

use crate::panel::Group;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ---- ingestion ----
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("missing cell: unit {unit} has no outcome for period {period}")]
    MissingCell { unit: String, period: i64 },
    #[error("unit {unit} is treated in the first period ({count} such units); use drop_first_period to discard them")]
    FirstPeriodTreated { unit: String, count: usize },
    #[error("unit {unit} has group {group}, outside 2..={max_period} and not `inf`")]
    GroupOutOfRange { unit: String, group: i64, max_period: usize },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    // ---- identification ----
    #[error("no feasible (g,t) cells with R = {factors}: need g - 2 >= R and at least R + 1 not-yet-treated groups")]
    NoFeasibleCells { factors: usize },
    #[error("comparison group {group} has no units for cell ({g},{t})")]
    EmptyComparisonGroup { group: Group, g: u32, t: usize },
    #[error("omega for cell ({g},{t}) is rank deficient (relative singular value {ratio:.3e})")]
    RankDeficientOmega { g: u32, t: usize, ratio: f64 },
    #[error("invalid omega specification: {0}")]
    InvalidOmega(String),
    #[error("need at least two not-yet-treated groups at period {t}, found {found}")]
    InsufficientComparisonGroups { t: usize, found: usize },

    // ---- estimation ----
    #[error("singular GMM design for cell ({g},{t}): {reason}")]
    SingularDesign { g: u32, t: usize, reason: String },
    #[error("degenerate denominator {value:.3e} (tolerance {tol:.3e}): factor not identified")]
    DegenerateDenominator { value: f64, tol: f64 },
    #[error("cell ({g},{t}) is not feasible: {reason}")]
    InfeasibleCell { g: u32, t: usize, reason: String },
    #[error("treated group {0} has no units")]
    EmptyTreatedGroup(u32),
    #[error("weight matrix must be {expected}x{expected} and positive definite")]
    InvalidWeight { expected: usize },
    #[error("unit {unit} has fewer than two untreated periods")]
    InsufficientPrePeriods { unit: usize },

    // ---- inference / aggregation ----
    #[error("influence vectors have mismatched lengths: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("need at least 2 bootstrap draws, got {0}")]
    TooFewDraws(usize),
    #[error("no feasible cells at event time {0}")]
    EmptyEventTime(i64),
    #[error("group {0} has no feasible cells")]
    GroupInfeasible(u32),
    #[error("no estimate supplied for cell ({g},{t})")]
    MissingCellEstimate { g: u32, t: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the input data or options rather than by
    /// the numerical estimation itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::EmptyDataset
                | Error::MissingCell { .. }
                | Error::FirstPeriodTreated { .. }
                | Error::GroupOutOfRange { .. }
                | Error::Malformed { .. }
                | Error::InvalidPanel(_)
                | Error::NoFeasibleCells { .. }
                | Error::InvalidOmega(_)
                | Error::Config(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}

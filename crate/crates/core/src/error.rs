use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PanelError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: price `{value}` is not a decimal with at most two fraction digits")]
    BadPrice { line: usize, value: String },
    #[error("line {line}: non-positive price `{value}`")]
    NonPositivePrice { line: usize, value: String },
    #[error("line {line}: duplicate observation for {store}/{product} week {week}")]
    Duplicate { line: usize, store: String, product: String, week: u32 },
    #[error("{store}/{product}: missing week {week}")]
    WeekGap { store: String, product: String, week: u32 },
    #[error("{store}/{product}: weeks {found:?} differ from store range {expected:?}")]
    InconsistentWeeks { store: String, product: String, expected: (u32, u32), found: (u32, u32) },
    #[error("panel is empty")]
    Empty,
    #[error("{0}")]
    InvalidArgument(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("invalid filter parameter: {0}")]
    InvalidParameter(String),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("endpoint margin {margin} too large for a series of {len} weeks")]
    MarginTooLarge { margin: usize, len: usize },
}

/// Failures of the statistical routines (rigidity, magnitude, inference).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("no transitions to count")]
    NoTransitions,
    #[error("frequency {0} outside [0, 1]")]
    FrequencyOutOfRange(f64),
    #[error("every product has zero price changes")]
    AllConstant,
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("zero variance")]
    ZeroVariance,
    #[error("empty sample")]
    EmptySample,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("statistic undefined on {failed} of {total} bootstrap resamples")]
    BootstrapUndefined { failed: usize, total: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HazardError {
    #[error("no events to fit")]
    NoEvents,
    #[error("information matrix is singular")]
    Singular,
    #[error("no usable covariates")]
    NoCovariates,
    #[error("invalid risk row: {0}")]
    InvalidRow(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation parameter: {0}")]
    InvalidParameter(String),
    #[error("preset: {0}")]
    Preset(String),
}

/// Crate-level error, tagged with the pipeline stage that produced it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Panel(#[from] PanelError),
    #[error("{0}")]
    Filter(#[from] FilterError),
    #[error("{0}")]
    Stats(#[from] StatsError),
    #[error("{0}")]
    Hazard(#[from] HazardError),
    #[error("{0}")]
    Sim(#[from] SimError),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the failure is numerical (as opposed to bad data or config).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Stats(_) | Error::Hazard(_))
    }

    pub fn stage(&self) -> &'static str {
        match self {
            Error::Panel(_) => "panel",
            Error::Filter(_) => "filters",
            Error::Stats(_) => "statistics",
            Error::Hazard(_) => "hazard",
            Error::Sim(_) => "simulate",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

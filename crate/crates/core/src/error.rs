use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing observation for unit `{unit}` at time {time} (panel must be balanced)")]
    MissingCell { unit: String, time: i64 },

    #[error("duplicate observation for unit `{unit}` at time {time}")]
    DuplicateCell { unit: String, time: i64 },

    #[error("treatment for unit `{unit}` switches off after adoption (treatment must be absorbing)")]
    NonAbsorbingTreatment { unit: String },

    #[error("unit `{unit}` is treated from the first period and has no pre-treatment period")]
    TreatedFromFirstPeriod { unit: String },

    #[error("panel has no never-treated units")]
    NoControls,

    #[error("panel has no treated units")]
    NoTreated,

    #[error("parse error at row {row}: {message}")]
    Parse { row: u64, message: String },

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("time labels must be consecutive integers; gap between {before} and {after}")]
    NonConsecutiveTime { before: i64, after: i64 },

    #[error("adoption period {0} is not a cohort of this panel")]
    UnknownCohort(usize),

    #[error("event time {ell} is outside the available range 1..={max}")]
    HorizonOutOfRange { ell: i64, max: usize },

    #[error("weight problem is degenerate: {0}")]
    DegenerateProblem(String),

    #[error("solver did not converge within {iterations} iterations (duality gap {gap:e})")]
    MaxIterations { iterations: usize, gap: f64 },

    #[error("{0}")]
    InvalidInput(String),

    #[error("too many failed resampling draws ({failed} failures for {reps} replications)")]
    TooManyFailedDraws { failed: usize, reps: usize },

    #[error("panel is degenerate for resampling: {0}")]
    DegeneratePanel(String),

    #[error("placebo inference needs more controls than treated units ({n_co} controls, {n_tr} treated)")]
    InsufficientControls { n_co: usize, n_tr: usize },

    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error("cohort {cohort}: {source}")]
    Cohort {
        cohort: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_cohort(self, cohort: usize) -> Self {
        match self {
            e @ Error::Cohort { .. } => e,
            e => Error::Cohort {
                cohort,
                source: Box::new(e),
            },
        }
    }

    /// True when the error comes from a numerical routine rather than from
    /// malformed input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::MaxIterations { .. }
            | Error::DegenerateProblem(_)
            | Error::TooManyFailedDraws { .. } => true,
            Error::Cohort { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

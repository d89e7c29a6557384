use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid distribution at {path}: {reason}")]
    InvalidDistribution { path: String, reason: String },

    #[error("parse error at {path}: {reason}")]
    Parse { path: String, reason: String },

    #[error("invalid valuation: {0}")]
    InvalidValuation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operation needs a discrete marginal: {0}")]
    NotDiscrete(String),

    #[error("no support point has tail probability in [{lo}, {hi}]; nearest achievable tails: below {below:?}, above {above:?}")]
    InfeasibleBand {
        lo: f64,
        hi: f64,
        below: Option<f64>,
        above: Option<f64>,
    },

    #[error("exhaustive demand over {0} items exceeds the 16-item limit")]
    DemandTooLarge(usize),

    #[error("oracle not supported for this valuation class: {0}")]
    Unsupported(String),

    #[error("enumeration budget exceeded: {needed} > {budget} ({what})")]
    Budget {
        what: String,
        needed: f64,
        budget: f64,
    },

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("simplex iteration limit reached")]
    IterationLimit,

    #[error("complexity table has no entry covering subset {0:?}")]
    IncompleteTable(Vec<usize>),

    #[error("entry fee rule has no samples")]
    EmptyFeeRule,
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{what} = {value} is outside the certified range {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    /// `b_match > 1`: Eve can block every single-photon pulse, so the plain
    /// full-blocking attack applies and vacuum matching is moot.
    #[error("full-blocking regime: b_match = {b_match} > 1 (eta below {threshold})")]
    FullBlockingRegime { b_match: f64, threshold: f64 },

    #[error("infeasible transport: prefix condition violated at n = {index} (excess {excess:e})")]
    InfeasibleTransport { index: usize, excess: f64 },

    #[error("vacuum probabilities differ: source {source_vacuum}, target {target_vacuum}")]
    MismatchedVacuum {
        source_vacuum: f64,
        target_vacuum: f64,
    },

    #[error("no root of d1 in eta for mu = {mu}: d1(eta_lo) = {at_low:e}, d1(eta_hi) = {at_high:e}")]
    NoRoot { mu: f64, at_low: f64, at_high: f64 },

    #[error("plan has no row for photon number {0} carrying mass {1:e}")]
    UncoveredBin(usize, f64),

    #[error("results are not comparable: {0}")]
    IncompatibleResults(String),

    #[error("parameters do not admit the requested attack: {0}")]
    InfeasibleParameters(String),

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{name} = {value} is outside its admissible range {range}")]
    Domain {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("row {row} of the influence matrix sums to zero, sensed expectation is undefined")]
    ZeroRowSum { row: usize },

    #[error("individual {row} has negative resistance {alpha:.3e}; parameters are infeasible")]
    Infeasible { row: usize, alpha: f64 },

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("segment too short: {len} samples, need at least {min}")]
    SegmentTooShort { len: usize, min: usize },

    #[error("no usable difference pairs for regime {0}")]
    NoPairs(i8),

    #[error(
        "regressor matrix is rank deficient (smallest singular value {smallest:.3e}, largest {largest:.3e}); {} deficient direction(s)",
        directions.len()
    )]
    RankDeficient {
        smallest: f64,
        largest: f64,
        directions: Vec<Vec<f64>>,
    },

    #[error("invalid window (k = {k}, p = {p}): {reason}")]
    Window {
        k: usize,
        p: usize,
        reason: &'static str,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("noise floor vanishes (sigma_o = sigma_p = 0); the accuracy condition is undefined")]
    ZeroNoiseFloor,

    #[error("no dwell time satisfies both conditions up to p = {cap}")]
    DwellNotReachable { cap: usize },

    #[error("index {index} out of range 1..={len}")]
    OutOfRange { index: usize, len: usize },

    #[error("inference row {row} is not usable: {reason}")]
    RowUnavailable { row: usize, reason: String },

    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, range: &'static str) -> Self {
        Error::Domain { name, value, range }
    }
}

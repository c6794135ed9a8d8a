use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid box (cx={cx}, cy={cy}, w={w}, h={h}): width and height must be positive and all coordinates finite")]
    InvalidBox { cx: f64, cy: f64, w: f64, h: f64 },

    #[error("tube has no frames")]
    EmptyTube,

    #[error("tube timestamps must be strictly increasing (t={prev} followed by t={next})")]
    UnsortedTube { prev: i64, next: i64 },

    #[error("invalid temporal span: start {start} must be before end {end}")]
    InvalidSpan { start: i64, end: i64 },

    #[error("degenerate tube: {frames} frame(s), at least 2 required")]
    DegenerateTube { frames: usize },

    #[error("{what} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("underdetermined fit: {frames} frames cannot determine an order-{order} polynomial")]
    Underdetermined { frames: usize, order: usize },

    #[error("ill-conditioned normal equations (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("polynomial order {order} outside supported range [{min}, {max}]")]
    OrderOutOfRange { order: usize, min: usize, max: usize },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("score vector sums to {sum}, expected 1")]
    NotNormalized { sum: f64 },

    #[error("cannot form {clusters} clusters from {boxes} boxes")]
    Cardinality { boxes: usize, clusters: usize },

    #[error("could not generate feasible geometry after {retries} attempts")]
    Infeasible { retries: usize },

    #[error("{path}: {message}")]
    Io { path: String, message: String, not_found: bool },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{location}: {message}")]
    Schema { location: String, message: String },

    #[error("schema version {found} is newer than the supported version {supported}")]
    UnsupportedVersion { found: u32, supported: u32 },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

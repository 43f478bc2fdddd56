use thiserror::Error;

/// Every failure mode surfaced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    // system validation
    #[error("kernel row {row} integrates to {sum} (expected 1 within 1e-9)")]
    NonStochasticRow { row: usize, sum: f64 },
    #[error("negative density {value} at index {index}")]
    NegativeDensity { index: usize, value: f64 },
    #[error("epsilon must lie in (0, 1), got {0}")]
    BadEpsilon(f64),
    #[error("|B| = {observed} exceeds declared bound {bound} at probe x={x}, y={y}")]
    BoundViolated { observed: f64, bound: f64, x: f64, y: f64 },
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("unknown builtin system `{0}`")]
    UnknownName(String),
    #[error("operation supports slow dimension 1 only, got {0}")]
    UnsupportedDimension(usize),
    #[error("operation is not defined for this fast driver: {0}")]
    UnsupportedDriver(&'static str),

    // numerics
    #[error("{what} did not converge (residual {residual:e} after {iterations} iterations)")]
    NoConvergence {
        what: &'static str,
        residual: f64,
        iterations: usize,
    },
    #[error("|beta| = {beta} outside the bracket [-{b_max}, {b_max}]")]
    BetaOutOfBracket { beta: f64, b_max: f64 },
    #[error("averaged trajectory left the slow domain at t = {t}")]
    BlowUp { t: f64 },
    #[error("x = {x} outside the rate table range [{lo}, {hi}]")]
    OutOfTableRange { x: f64, lo: f64, hi: f64 },
    #[error("rate tables have a gap: {0}")]
    TableGap(String),

    // statistics and simulation
    #[error("need at least 3 distinct epsilon groups, got {0}")]
    TooFewGroups(usize),
    #[error("group epsilon = {epsilon} is {fraction:.3} censored (limit 0.10)")]
    TooCensored { epsilon: f64, fraction: f64 },
    #[error("attractor neighborhoods overlap or leave the slow domain: {0}")]
    NeighborhoodsOverlap(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    // quasipotential
    #[error("averaged drift has no attracting zero on the domain")]
    NoAttractors,
    #[error("degenerate zero of the averaged drift at x = {x} (derivative {derivative:e})")]
    DegenerateZero { x: f64, derivative: f64 },
    #[error("i-graph enumeration limited to 8 attractors, got {0}")]
    TooLarge(usize),
    #[error("every i-graph weight vanishes (all barriers infinite)")]
    AllInfinite,

    // resonance
    #[error("no root of {0} on the search interval")]
    NoRoot(&'static str),
    #[error("rho = {rho} is at or above the merge level {lambda_star}")]
    RhoAboveMerge { rho: f64, lambda_star: f64 },
    #[error("averaged slow drift changes sign inside [{lo}, {hi}]")]
    SignViolation { lo: f64, hi: f64 },
    #[error("trace has {0} direction reversals, need at least 3")]
    TooFewReversals(usize),
}

impl Error {
    /// True for failures of an iterative numerical method, as opposed to bad input.
    pub fn is_nonconvergence(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. } | Error::BlowUp { .. } | Error::NoRoot(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

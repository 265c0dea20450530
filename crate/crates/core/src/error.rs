use crate::Site;

/// Errors raised by kernel construction and the numerical routines.
#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum Error {
    #[error("region list does not tile the integers: {0}")]
    Coverage(String),
    #[error("{name} = {value} is outside its admissible range {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("invalid two-sided parameters: {0}")]
    InvalidParams(String),
    #[error("all surviving mass was killed at step {step}")]
    Extinct { step: usize },
    #[error("brute-force enumeration supports n <= {max}, got {n}")]
    TooManySteps { n: usize, max: usize },
    #[error("trace has {got} steps, at least {need} are required")]
    TraceTooShort { got: usize, need: usize },
    #[error("weight {w} exceeds the estimated radius of convergence")]
    AboveRadius { w: f64 },
    #[error("kernel has a nonzero holding probability at site {0}; two-step restriction needs a period-2 kernel")]
    NotPeriodic(Site),
    #[error(
        "transformed kernel is not stochastic: row sum deviation {deviation:e} at site {site}"
    )]
    NotStochastic { site: Site, deviation: f64 },
    #[error("hitting split did not converge by horizon {horizon} (last change {change:e})")]
    HorizonExhausted { horizon: Site, change: f64 },
    #[error("path left the allowed window [{lo}, {hi}]")]
    WindowBlowUp { lo: Site, hi: Site },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("measures are not comparable: {0}")]
    Mismatch(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("index {index} out of range for {len} users")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("user cannot upload: zero uplink rate")]
    InfeasibleDelay,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("budget {budget} is below the sum of lower bounds {required}")]
    InfeasibleBudget { budget: f64, required: f64 },
    #[error("{0} did not converge")]
    NoConvergence(&'static str),
    #[error("subchannel has {users} users; exhaustive order enumeration supports at most {max}, use the ratio-rule fallback")]
    EnumerationTooLarge { users: usize, max: usize },
    #[error("correlation undefined: zero variance")]
    ZeroVariance,
    #[error("diverged: non-finite model parameters")]
    Diverged,
}

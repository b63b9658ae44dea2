use thiserror::Error;

/// Errors raised by model construction, the oracles, the particle engine and
/// the mesh estimator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A model function broke its contract (non-positive density, bad shape, ...).
    #[error("model contract violated at k={k}: {detail}")]
    ModelContract { k: usize, detail: String },

    /// A caller broke an operation precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// The operation needs a finite state space model.
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    /// Exhaustive enumeration would exceed the configured cap.
    #[error("enumeration too large: {required} {what} exceeds cap of {cap}")]
    EnumerationTooLarge { what: &'static str, required: u128, cap: u128 },

    /// The normalized flow is undefined because `eta_{k-1}(G_{k-1}) = 0`.
    #[error("degenerate flow: zero criteria mass entering step {step}")]
    DegenerateFlow { step: usize },

    /// The particle system went extinct at step `k` (all criteria weights zero).
    #[error("particle system extinct at step {k}")]
    Extinct { k: usize },

    /// Too few Monte Carlo runs for a statistical check.
    #[error("insufficient runs: got {got}, need at least {min}")]
    InsufficientRuns { got: usize, min: usize },

    /// A model definition file could not be parsed.
    #[error("model definition: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

/// Errors raised by the simulation and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("Bloch vector outside the unit ball (|b| = {0})")]
    BlochOutOfRange(f64),

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("invalid outcome {outcome} for setup {setup}")]
    InvalidOutcome { setup: char, outcome: f64 },

    #[error("jump superoperator applied to a dark state (Tr[c rho c^dag] = {0:e})")]
    DarkStateJump(f64),

    #[error("state left the positive cone (min eigenvalue {0:e})")]
    NotPositive(f64),

    #[error("trajectory integration failed at step {step}: purity {purity}")]
    IntegrationFailure { step: usize, purity: f64 },

    #[error("record inconsistent with the model at step {step} (likelihood {likelihood:e})")]
    InconsistentRecord { step: usize, likelihood: f64 },

    #[error("record/parameter mismatch: {0}")]
    RecordMismatch(String),

    #[error("hypothetical ensemble must contain at least one sample")]
    EmptyEnsemble,

    #[error("all smoothing weights vanished at grid index {0}; increase the number of hypothetical records")]
    DegenerateEnsemble(usize),

    #[error("exhaustive enumeration over {0} steps is too large (limit 16)")]
    TooManySteps(usize),

    #[error("enumeration requires a photon-counting unobserved setup")]
    EnumerationSetup,

    #[error(
        "Liouvillian null space is not one-dimensional (second smallest singular value {0:e})"
    )]
    NonUniqueSteadyState(f64),

    #[error("steady-state window [{start}, {end}] is shorter than max |tau| = {tau}")]
    WindowTooShort { start: f64, end: f64, tau: f64 },

    #[error("time grids do not match: {0}")]
    GridMismatch(String),

    #[error("configuration error in `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("estimated cost {estimate:e} Kraus applications exceeds budget {budget:e}")]
    OverBudget { estimate: f64, budget: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by the user's configuration rather than the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::InvalidParams(_)
                | Error::OverBudget { .. }
                | Error::WindowTooShort { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

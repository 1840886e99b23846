use std::fmt;

/// Stage of the optimizer at which a QoS target could not be met.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// The initial point violated the QoS equalities and the feasibility
    /// phase could not recover all targets within the power budget.
    FeasibilityPhase,
    /// The first energy-efficiency subproblem was infeasible.
    FirstSubproblem,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::FeasibilityPhase => write!(f, "feasibility phase"),
            Stage::FirstSubproblem => write!(f, "first subproblem"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("QoS targets infeasible at the given power budget ({stage}); best QoS fraction reached {qos_fraction:.6}")]
    Infeasible { stage: Stage, qos_fraction: f64 },

    #[error("conic solver failed with status {status} (outer {outer}, inner {inner})")]
    Solver {
        status: String,
        outer: usize,
        inner: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

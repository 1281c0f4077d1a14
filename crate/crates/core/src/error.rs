use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate beamformer for user {user} in slot {slot}")]
    DegenerateBeamformer { user: usize, slot: usize },

    #[error("auxiliary weight must be positive, got {0}")]
    NonPositiveWeight(f64),

    #[error("ill-conditioned receive covariance (condition number {0:e})")]
    IllConditioned(f64),

    #[error("dual variable search failed to bracket the unit-norm point")]
    Bracketing,

    #[error("no feasible trajectory: {0}")]
    NoFeasibleTrajectory(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error(
        "objective decreased at outer iteration {iteration}: {previous} -> {current} bps/Hz"
    )]
    MonotonicityViolation {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("infeasible iterate at outer iteration {iteration}: {detail}")]
    InfeasibleIterate { iteration: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

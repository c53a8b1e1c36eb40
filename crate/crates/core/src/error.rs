use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry: {0}")]
    Geometry(String),

    #[error("state space of {states} configurations exceeds the cap of {cap}")]
    TooLarge { states: u128, cap: usize },

    #[error("window is not contained in the measure's window: {0}")]
    NotContained(String),

    #[error("conditioning on a cylinder of probability zero: {0}")]
    NullCylinder(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("torus too small: {0}")]
    TorusTooSmall(String),

    #[error("boundary condition does not cover the interaction range: {0}")]
    BoundaryIncomplete(String),

    #[error("measure is not non-null (smallest single-site conditional is {delta}); soften it or use g_tilde")]
    NotNonNull { delta: f64 },

    #[error("rates can enter a trap state: {0}")]
    TrapState(String),

    #[error("dynamics are not reversible for the specification (detailed balance defect {0:e})")]
    NotReversible(f64),

    #[error("negative time {0}")]
    NegativeTime(f64),

    #[error("stationary solve is numerically rank ambiguous; singular values {singular_values:?}")]
    RankAmbiguity { singular_values: Vec<f64> },

    #[error("indeterminate value: {0}")]
    Indeterminate(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

use thiserror::Error;

use crate::sdr::{KktReport, SdrOutput};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported code dimension {0} (expected 1, 2, 4 or 8)")]
    UnsupportedCodeDimension(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("zero virtual channel")]
    ZeroVirtualChannel,

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// The relaxed problem has no feasible point. `certificate` is a dual
    /// improving ray `y` with `b·y > 0` and `−𝒜*y ⪰ 0`, normalized to `b·y = 1`.
    #[error("relaxed problem is infeasible")]
    Infeasible { certificate: Vec<f64> },

    #[error("relaxed problem is unbounded")]
    Unbounded,

    #[error("interior-point solver hit the iteration limit ({})", .0.report)]
    MaxIterations(Box<SdrOutput>),

    #[error("randomization required: rank {0} exceeds the largest code dimension")]
    RandomizationRequired(usize),

    #[error("rank {rank} exceeds code dimension {k}")]
    RankExceedsCode { rank: usize, k: usize },

    #[error("no rank drop: extremal eigenvalue of the reduction direction is numerically zero")]
    NoRankDrop,

    #[error("power control linear program is infeasible")]
    PowerControlInfeasible,

    #[error("randomization failed: every candidate power-control LP was infeasible")]
    RandomizationFailed,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kkt(&self) -> Option<&KktReport> {
        match self {
            Error::MaxIterations(out) => Some(&out.report),
            _ => None,
        }
    }
}

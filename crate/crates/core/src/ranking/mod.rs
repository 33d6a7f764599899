//! Bradley-Terry ranking: win matrices, the iterative fit, normalization,
//! ordering and bootstrap intervals. Everything here is pure.

mod bootstrap;
mod bradley_terry;
mod win_matrix;

use thiserror::Error;

use crate::domain::ModelId;

pub use bootstrap::{bootstrap_ci, BootstrapConfig, BootstrapResult};
pub use bradley_terry::{
    bt_fit, bt_fit_from, bt_update, normalize, rank, rank_order, win_probability, BtFit, FitConfig,
    Interval, RankingResult, ScoreVector, SCORE_TOTAL,
};
pub use win_matrix::{build_win_matrix, tally_duels, Duel, WinMatrix};

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("need at least two models, got {0}")]
    TooFewModels(usize),
    #[error("model {0} listed twice")]
    DuplicateModel(ModelId),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("diagonal entry {0} must be zero")]
    NonZeroDiagonal(usize),
    #[error("invalid win count {0:?}")]
    InvalidCount(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("model index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("a model cannot be compared with itself (index {0})")]
    SameModel(usize),
    #[error("score at index {index} must be finite and positive, got {value}")]
    NonPositiveScore { index: usize, value: f64 },
    #[error("model {0} has no wins or no losses")]
    DegenerateRow(usize),
    #[error(
        "win graph is not strongly connected ({votes} votes); scores are not identifiable \
         without regularization"
    )]
    DegenerateWinGraph { votes: u64 },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        scores: Vec<f64>,
    },
    #[error("unknown reference: {0}")]
    UnknownReference(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("all {0} bootstrap resamples failed to fit")]
    AllResamplesFailed(usize),
}

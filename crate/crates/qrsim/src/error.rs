//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    /// The intensity configuration does not admit a normalizable invariant
    /// distribution (or a rate ratio is undefined).
    #[error("non-ergodic intensity configuration at level {level}: {reason}")]
    NonErgodic { level: usize, reason: String },

    /// Every event clock has rate zero: the book can never change again.
    #[error("frozen book: total event intensity is zero")]
    FrozenBook,

    /// A consuming event was asked to remove more volume than is standing.
    #[error("cannot consume {requested} units at level {level}: only {available} available")]
    ConsumeTooMuch {
        level: i32,
        requested: u64,
        available: u64,
    },

    /// An entire side of the visible book is empty, so quotes are undefined.
    #[error("degenerate book: {side} side empty within the visible window")]
    DegenerateBook { side: &'static str },

    /// A market order was larger than the standing best-queue volume.
    #[error("order size {requested} exceeds best-queue volume {available}")]
    OrderExceedsBest { requested: u64, available: u64 },

    #[error("episode already finished")]
    EpisodeFinished,

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Configuration loading reports every violation it found, not just the first.
    #[error("configuration rejected:\n{}", .0.join("\n"))]
    ConfigViolations(Vec<String>),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("experiment error: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

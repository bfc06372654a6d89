//! Queue-reactive limit order book model.
//!
//! Queue sizes at the `2K` visible levels evolve as independent birth-death
//! processes with queue-size-dependent intensities; depletions of a standing
//! best queue probabilistically drag the reference price along and
//! regenerate the book. See the submodules for the intensity tables,
//! invariant distributions and the event engine.

pub mod book;
pub mod engine;
pub mod intensity;

pub use book::{BookSide, LobState, Quotes};
pub use engine::{
    EventKind, FillReport, LobEvent, LoggedEvent, PriceMoveOutcome, Qrm, QrmParams,
};
pub use intensity::{
    arrival_departure_ratio, check_ergodicity, invariant_distribution,
    invariant_distribution_auto, ErgodicityReport, IntensityTable, LevelRates,
};

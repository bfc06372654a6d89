//! Event-driven queue-reactive limit order book simulation with an
//! optimal-execution environment on top: market-impact experiments, a
//! from-scratch double DQN agent, rule-based execution benchmarks and a
//! statistical evaluation harness.
//!
//! The crate is organized as a library; the `examples/` directory holds one
//! runnable example per capability and the `qrsim` binary exposes the same
//! functionality behind `simulate`, `impact`, `train`, `evaluate` and
//! `sweep` subcommands.

pub mod env;
pub mod error;
pub mod impact;
pub mod nn;
pub mod qrm;
pub mod rng;

pub use error::{Result, SimError};
pub use qrm::{BookSide, LobState, Qrm, QrmParams};

//! Visible book state around the reference price.
//!
//! The reference price lives on the half-tick grid and is stored as an
//! integer count of half-ticks, so level prices and mid-price comparisons
//! are exact. Level `i` on the ask side is priced `2i - 1` half-ticks above
//! the reference price; bid levels mirror below it.

use crate::error::{Result, SimError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BookSide {
    Bid,
    Ask,
}

impl BookSide {
    pub fn sign(self) -> i64 {
        match self {
            BookSide::Bid => -1,
            BookSide::Ask => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BookSide::Bid => "bid",
            BookSide::Ask => "ask",
        }
    }
}

/// Best quotes derived from a book state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quotes {
    pub best_bid: f64,
    pub best_ask: f64,
    pub mid: f64,
}

/// Queue sizes (AES units) for the `2K` visible levels plus the reference
/// price and the simulation clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LobState {
    /// Reference price expressed in half-ticks.
    pub ref_half_ticks: i64,
    /// `bid[i]` is the queue at level `i + 1` below the reference price.
    pub bid: Vec<u64>,
    /// `ask[i]` is the queue at level `i + 1` above the reference price.
    pub ask: Vec<u64>,
    /// Seconds since the start of the simulation.
    pub clock: f64,
}

impl LobState {
    pub fn new(ref_half_ticks: i64, depth: usize) -> Self {
        LobState {
            ref_half_ticks,
            bid: vec![0; depth],
            ask: vec![0; depth],
            clock: 0.0,
        }
    }

    pub fn depth(&self) -> usize {
        self.ask.len()
    }

    pub fn ref_price(&self, tick: f64) -> f64 {
        self.ref_half_ticks as f64 * tick / 2.0
    }

    pub fn queues(&self, side: BookSide) -> &[u64] {
        match side {
            BookSide::Bid => &self.bid,
            BookSide::Ask => &self.ask,
        }
    }

    pub fn queues_mut(&mut self, side: BookSide) -> &mut Vec<u64> {
        match side {
            BookSide::Bid => &mut self.bid,
            BookSide::Ask => &mut self.ask,
        }
    }

    /// Price of `level` (1-based, positive ask / negative bid) in half-ticks.
    pub fn level_half_ticks(&self, level: i32) -> i64 {
        let l = i64::from(level.abs());
        self.ref_half_ticks + i64::from(level.signum()) * (2 * l - 1)
    }

    /// Price of a signed level in price units.
    pub fn level_price(&self, level: i32, tick: f64) -> f64 {
        self.level_half_ticks(level) as f64 * tick / 2.0
    }

    /// First nonempty level of a side: `(zero-based index, size)`.
    pub fn best(&self, side: BookSide) -> Option<(usize, u64)> {
        self.queues(side)
            .iter()
            .enumerate()
            .find(|(_, &q)| q > 0)
            .map(|(i, &q)| (i, q))
    }

    fn best_half_ticks(&self, side: BookSide) -> Result<i64> {
        let (idx, _) = self.best(side).ok_or(SimError::DegenerateBook {
            side: side.name(),
        })?;
        let level = (idx as i64) + 1;
        Ok(self.ref_half_ticks + side.sign() * (2 * level - 1))
    }

    /// Mid-price in quarter-ticks, exact on the grid. Errors when either
    /// side is empty within the visible window.
    pub fn mid_quarter_ticks(&self) -> Result<i64> {
        Ok(self.best_half_ticks(BookSide::Bid)? + self.best_half_ticks(BookSide::Ask)?)
    }

    pub fn mid_price(&self, tick: f64) -> Result<f64> {
        Ok(self.mid_quarter_ticks()? as f64 * tick / 4.0)
    }

    /// Best bid, best ask and mid-price in price units.
    pub fn quotes(&self, tick: f64) -> Result<Quotes> {
        let bid_ht = self.best_half_ticks(BookSide::Bid)?;
        let ask_ht = self.best_half_ticks(BookSide::Ask)?;
        Ok(Quotes {
            best_bid: bid_ht as f64 * tick / 2.0,
            best_ask: ask_ht as f64 * tick / 2.0,
            mid: (bid_ht + ask_ht) as f64 * tick / 4.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Book from the worked depletion example: reference price 1.005,
    /// tick 0.01, three levels per side all nonempty.
    fn example_book() -> LobState {
        LobState {
            ref_half_ticks: 201, // 1.005 / 0.005
            bid: vec![3, 5, 4],
            ask: vec![1, 2, 4],
            clock: 0.0,
        }
    }

    #[test]
    fn quotes_full_book() {
        let q = example_book().quotes(0.01).unwrap();
        assert_relative_eq!(q.best_bid, 1.00, epsilon = 1e-12);
        assert_relative_eq!(q.best_ask, 1.01, epsilon = 1e-12);
        assert_relative_eq!(q.mid, 1.005, epsilon = 1e-12);
    }

    #[test]
    fn quotes_with_empty_inner_ask() {
        let mut b = example_book();
        b.ask[0] = 0;
        let q = b.quotes(0.01).unwrap();
        assert_relative_eq!(q.best_ask, 1.02, epsilon = 1e-12);
        assert_relative_eq!(q.mid, 1.01, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_book_mid_equals_ref() {
        let b = example_book();
        assert_relative_eq!(b.mid_price(0.01).unwrap(), b.ref_price(0.01), epsilon = 1e-12);
    }

    #[test]
    fn empty_side_is_degenerate() {
        let mut b = example_book();
        b.ask = vec![0, 0, 0];
        assert!(matches!(
            b.quotes(0.01),
            Err(SimError::DegenerateBook { side: "ask" })
        ));
    }

    #[test]
    fn level_prices_sit_on_the_tick_grid() {
        let b = example_book();
        assert_relative_eq!(b.level_price(1, 0.01), 1.01, epsilon = 1e-12);
        assert_relative_eq!(b.level_price(2, 0.01), 1.02, epsilon = 1e-12);
        assert_relative_eq!(b.level_price(3, 0.01), 1.03, epsilon = 1e-12);
        assert_relative_eq!(b.level_price(-1, 0.01), 1.00, epsilon = 1e-12);
        assert_relative_eq!(b.level_price(-2, 0.01), 0.99, epsilon = 1e-12);
        assert_relative_eq!(b.level_price(-3, 0.01), 0.98, epsilon = 1e-12);
    }
}

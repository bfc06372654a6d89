//! Competing-clock event engine and the reference-price update mechanism.
//!
//! Every visible queue runs three independent exponential clocks (arrivals,
//! market orders, cancellations) whose rates depend on the current queue
//! size. When an event empties the standing best queue of a side and the
//! mid-price moves, the reference price follows by one tick with probability
//! `theta`; after such a move the book is either redrawn from the invariant
//! distribution (probability `theta_reinit`) or shifted by one tick, with
//! the newly revealed outer level drawn from the deepest level's invariant
//! distribution. Mid-price changes caused by refills never move the
//! reference price. Trader market orders go through the identical mechanism.

use super::book::{BookSide, LobState, Quotes};
use super::intensity::{invariant_distribution_auto, IntensityTable};
use crate::error::{Result, SimError};
use crate::rng::Rng;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

/// Model parameters: depth, grid, reference-price probabilities, intensity
/// table, per-level average event sizes and the starting reference price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrmParams {
    /// Visible levels per side (K).
    pub depth: usize,
    /// Tick size in price units.
    pub tick: f64,
    /// Probability that the reference price follows a depletion-induced
    /// mid-price change.
    pub theta: f64,
    /// Probability that the book is redrawn from the invariant distribution
    /// after a reference-price move.
    pub theta_reinit: f64,
    pub intensities: IntensityTable,
    /// Average event size per level, in shares per AES unit. Queue sizes and
    /// trade quantities are expressed in AES units throughout.
    pub aes: Vec<f64>,
    pub initial_ref_price: f64,
}

impl Default for QrmParams {
    fn default() -> Self {
        QrmParams {
            depth: 3,
            tick: 0.01,
            theta: 0.7,
            theta_reinit: 0.85,
            intensities: IntensityTable::default_table(),
            aes: vec![1.0; 3],
            initial_ref_price: 100.005,
        }
    }
}

impl QrmParams {
    /// Collects every invariant violation instead of stopping at the first.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.depth < 1 {
            errs.push("depth (K) must be >= 1".to_string());
        }
        if !(self.tick > 0.0) || !self.tick.is_finite() {
            errs.push(format!("tick must be positive and finite, got {}", self.tick));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            errs.push(format!("theta must lie in [0, 1], got {}", self.theta));
        }
        if !(0.0..=1.0).contains(&self.theta_reinit) {
            errs.push(format!("theta_reinit must lie in [0, 1], got {}", self.theta_reinit));
        }
        if self.aes.len() != self.depth {
            errs.push(format!(
                "aes must have one entry per level: {} entries for depth {}",
                self.aes.len(),
                self.depth
            ));
        }
        for (i, &a) in self.aes.iter().enumerate() {
            if !(a > 0.0) || !a.is_finite() {
                errs.push(format!("aes at level {} must be positive, got {a}", i + 1));
            }
        }
        if self.intensities.depth() != self.depth {
            errs.push(format!(
                "intensity table has {} levels but depth is {}",
                self.intensities.depth(),
                self.depth
            ));
        }
        if let Err(mut table_errs) = self.intensities.validate() {
            errs.append(&mut table_errs);
        }
        if self.tick > 0.0 {
            let half = self.tick / 2.0;
            let ht = (self.initial_ref_price / half).round();
            if (ht * half - self.initial_ref_price).abs() > 1e-9 * self.initial_ref_price.abs().max(1.0) {
                errs.push(format!(
                    "initial_ref_price {} does not sit on the half-tick grid (tick {})",
                    self.initial_ref_price, self.tick
                ));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    pub fn initial_ref_half_ticks(&self) -> i64 {
        (self.initial_ref_price / (self.tick / 2.0)).round() as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    LimitArrival,
    MarketOrder,
    Cancellation,
    TraderMarketOrder,
}

impl EventKind {
    pub fn label(self) -> &'static str {
        match self {
            EventKind::LimitArrival => "limit",
            EventKind::MarketOrder => "market",
            EventKind::Cancellation => "cancel",
            EventKind::TraderMarketOrder => "trader",
        }
    }
}

/// One book event: kind, signed level (negative = bid side), size in AES
/// units and the exponential waiting time that preceded it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LobEvent {
    pub kind: EventKind,
    pub level: i32,
    pub size: u64,
    pub dt: f64,
}

/// What the reference-price mechanism did while applying an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PriceMoveOutcome {
    /// The mid-price changed as a result of the event.
    pub mid_changed: bool,
    /// The reference price followed the change by one tick.
    pub ref_moved: bool,
    /// After the move, the book was redrawn from the invariant distribution
    /// (`true`) rather than shifted (`false`). Only meaningful when
    /// `ref_moved` is set.
    pub redraw: bool,
}

/// Execution summary for an exogenous market order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FillReport {
    /// Volume-weighted fill price; all fills execute at the best quote.
    pub price: f64,
    pub size: u64,
}

/// Row of a simulation event log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoggedEvent {
    pub clock: f64,
    pub kind: EventKind,
    pub level: i32,
    pub size: u64,
    pub mid: f64,
    pub ref_price: f64,
}

/// Immutable simulation engine: parameters plus precomputed per-level
/// invariant distributions. Instances are cheap to share across threads;
/// all mutable state lives in `LobState` and the caller's RNG.
#[derive(Debug, Clone)]
pub struct Qrm {
    params: QrmParams,
    /// Per-level invariant CDF used for redraws and outer-level reveals.
    pi_cdf: Vec<Vec<f64>>,
    pi: Vec<Vec<f64>>,
}

impl Qrm {
    pub fn new(params: QrmParams) -> Result<Self> {
        params.validate().map_err(SimError::ConfigViolations)?;
        let mut pi = Vec::with_capacity(params.depth);
        let mut pi_cdf = Vec::with_capacity(params.depth);
        for level in 1..=params.depth {
            let dist = invariant_distribution_auto(params.intensities.level(level)).map_err(
                |e| match e {
                    SimError::NonErgodic { reason, .. } => SimError::NonErgodic { level, reason },
                    other => other,
                },
            )?;
            let mut cdf = Vec::with_capacity(dist.len());
            let mut acc = 0.0;
            for &p in &dist {
                acc += p;
                cdf.push(acc);
            }
            pi.push(dist);
            pi_cdf.push(cdf);
        }
        Ok(Qrm { params, pi, pi_cdf })
    }

    pub fn params(&self) -> &QrmParams {
        &self.params
    }

    /// Invariant distribution of a level (1-based), as used by the sampler.
    pub fn invariant(&self, level: usize) -> &[f64] {
        &self.pi[level - 1]
    }

    fn sample_level(&self, level: usize, rng: &mut Rng) -> u64 {
        let cdf = &self.pi_cdf[level - 1];
        let u: f64 = rng.gen();
        match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) | Err(i) => (i.min(cdf.len() - 1)) as u64,
        }
    }

    /// Fresh book with every queue drawn independently from its level's
    /// invariant distribution, centered at the configured reference price.
    pub fn sample_invariant_book(&self, rng: &mut Rng) -> LobState {
        let mut state = LobState::new(self.params.initial_ref_half_ticks(), self.params.depth);
        self.redraw_book(&mut state, rng);
        state
    }

    /// Invariant book conditioned on every queue being nonempty (the
    /// typical configuration; used to initialize controlled experiments).
    pub fn sample_nonempty_book(&self, rng: &mut Rng) -> LobState {
        loop {
            let state = self.sample_invariant_book(rng);
            if state.bid.iter().all(|&q| q > 0) && state.ask.iter().all(|&q| q > 0) {
                return state;
            }
        }
    }

    fn redraw_book(&self, state: &mut LobState, rng: &mut Rng) {
        for i in 0..self.params.depth {
            state.bid[i] = self.sample_level(i + 1, rng);
        }
        for i in 0..self.params.depth {
            state.ask[i] = self.sample_level(i + 1, rng);
        }
    }

    pub fn quotes(&self, state: &LobState) -> Result<Quotes> {
        state.quotes(self.params.tick)
    }

    /// Draws the next endogenous event: waiting time from the total
    /// intensity, then kind and level proportionally to their rates.
    pub fn next_event(&self, state: &LobState, rng: &mut Rng) -> Result<LobEvent> {
        let mut total = 0.0;
        for side in [BookSide::Bid, BookSide::Ask] {
            let queues = state.queues(side);
            for (i, &q) in queues.iter().enumerate() {
                total += self.params.intensities.level(i + 1).total_at(q);
            }
        }
        if total <= 0.0 {
            return Err(SimError::FrozenBook);
        }
        let dt = -(1.0 - rng.gen::<f64>()).ln() / total;
        let mut u = rng.gen::<f64>() * total;
        for side in [BookSide::Bid, BookSide::Ask] {
            let queues = state.queues(side);
            for i in 0..queues.len() {
                let q = queues[i];
                let lv = self.params.intensities.level(i + 1);
                let level = (i as i32 + 1) * side.sign() as i32;
                for (kind, rate) in [
                    (EventKind::LimitArrival, lv.limit_at(q)),
                    (EventKind::MarketOrder, lv.market_at(q)),
                    (EventKind::Cancellation, lv.cancel_at(q)),
                ] {
                    if u < rate {
                        return Ok(LobEvent { kind, level, size: 1, dt });
                    }
                    u -= rate;
                }
            }
        }
        // Floating-point slack: attribute to the last positive clock.
        let side = BookSide::Ask;
        let i = state.ask.len() - 1;
        Ok(LobEvent {
            kind: EventKind::Cancellation,
            level: (i as i32 + 1) * side.sign() as i32,
            size: 1,
            dt,
        })
    }

    /// Applies an event to the book, advancing the clock by its waiting
    /// time and running the reference-price mechanism when the event
    /// depleted a standing best queue and moved the mid-price.
    pub fn apply_event(
        &self,
        state: &mut LobState,
        event: &LobEvent,
        rng: &mut Rng,
    ) -> Result<PriceMoveOutcome> {
        let pre_mid = state.mid_quarter_ticks()?;
        let side = if event.level < 0 { BookSide::Bid } else { BookSide::Ask };
        let idx = (event.level.unsigned_abs() as usize) - 1;
        if idx >= state.depth() {
            return Err(SimError::Config(format!("event level {} outside depth", event.level)));
        }
        let was_best = state.best(side).map(|(i, _)| i) == Some(idx);
        let mut depleted_best = None;
        match event.kind {
            EventKind::LimitArrival => {
                state.queues_mut(side)[idx] += event.size;
            }
            EventKind::MarketOrder | EventKind::Cancellation | EventKind::TraderMarketOrder => {
                let q = state.queues_mut(side);
                if q[idx] < event.size {
                    return Err(SimError::ConsumeTooMuch {
                        level: event.level,
                        requested: event.size,
                        available: q[idx],
                    });
                }
                q[idx] -= event.size;
                if was_best && q[idx] == 0 {
                    depleted_best = Some(side);
                }
            }
        }
        state.clock += event.dt;
        self.settle_after_change(state, pre_mid, depleted_best, rng)
    }

    /// Reference-price decision shared by endogenous events and trader
    /// orders. Fires only on mid-price changes caused by a best-queue
    /// depletion; the reference price moves one tick toward the change.
    fn settle_after_change(
        &self,
        state: &mut LobState,
        pre_mid: i64,
        depleted_best: Option<BookSide>,
        rng: &mut Rng,
    ) -> Result<PriceMoveOutcome> {
        let post_mid = state.mid_quarter_ticks()?;
        let mid_changed = post_mid != pre_mid;
        if !mid_changed || depleted_best.is_none() {
            return Ok(PriceMoveOutcome { mid_changed, ref_moved: false, redraw: false });
        }
        if !rng.gen_bool(self.params.theta) {
            return Ok(PriceMoveOutcome { mid_changed, ref_moved: false, redraw: false });
        }
        let dir = if post_mid > pre_mid { 1i64 } else { -1i64 };
        state.ref_half_ticks += 2 * dir;
        let redraw = rng.gen_bool(self.params.theta_reinit);
        if redraw {
            self.redraw_book(state, rng);
        } else {
            self.shift_book(state, dir, rng);
        }
        // The relocated window must still quote both sides.
        state.mid_quarter_ticks()?;
        Ok(PriceMoveOutcome { mid_changed: true, ref_moved: true, redraw })
    }

    /// Shifts standing volumes by one tick after a reference-price move,
    /// revealing a fresh outer level drawn from the deepest level's
    /// invariant distribution. The vacated queue in front of the old best
    /// crosses to the opposite side of the new grid (it is empty whenever
    /// the mechanism fires).
    fn shift_book(&self, state: &mut LobState, dir: i64, rng: &mut Rng) {
        let k = state.depth();
        if dir > 0 {
            let crossed = state.ask[0];
            for i in 0..k - 1 {
                state.ask[i] = state.ask[i + 1];
            }
            state.ask[k - 1] = self.sample_level(k, rng);
            for i in (1..k).rev() {
                state.bid[i] = state.bid[i - 1];
            }
            state.bid[0] = crossed;
        } else {
            let crossed = state.bid[0];
            for i in 0..k - 1 {
                state.bid[i] = state.bid[i + 1];
            }
            state.bid[k - 1] = self.sample_level(k, rng);
            for i in (1..k).rev() {
                state.ask[i] = state.ask[i - 1];
            }
            state.ask[0] = crossed;
        }
    }

    /// Executes an exogenous market order against the best queue of a side.
    /// The fill prices at the best quote; a size of zero is a no-op and a
    /// size above the standing best volume is rejected (callers clamp).
    /// Depleting the best queue triggers the same reference-price mechanism
    /// as an endogenous event.
    pub fn apply_market_order(
        &self,
        state: &mut LobState,
        side: BookSide,
        size: u64,
        rng: &mut Rng,
    ) -> Result<(FillReport, PriceMoveOutcome)> {
        let (idx, available) = state.best(side).ok_or(SimError::DegenerateBook {
            side: side.name(),
        })?;
        if size == 0 {
            return Ok((
                FillReport { price: 0.0, size: 0 },
                PriceMoveOutcome::default(),
            ));
        }
        if size > available {
            return Err(SimError::OrderExceedsBest { requested: size, available });
        }
        let level = (idx as i32 + 1) * side.sign() as i32;
        let price = state.level_price(level, self.params.tick);
        let pre_mid = state.mid_quarter_ticks()?;
        state.queues_mut(side)[idx] -= size;
        let depleted_best = (state.queues(side)[idx] == 0).then_some(side);
        let outcome = self.settle_after_change(state, pre_mid, depleted_best, rng)?;
        Ok((FillReport { price, size }, outcome))
    }

    /// Runs the endogenous dynamics for exactly `duration` seconds,
    /// returning the applied-event log. The event whose waiting time would
    /// overshoot the horizon is discarded, which is equivalent in law by
    /// memorylessness of the exponential clocks.
    pub fn simulate_until(
        &self,
        state: &mut LobState,
        duration: f64,
        rng: &mut Rng,
    ) -> Result<Vec<LoggedEvent>> {
        let t_end = state.clock + duration;
        let mut log = Vec::new();
        loop {
            let event = self.next_event(state, rng)?;
            if state.clock + event.dt > t_end {
                state.clock = t_end;
                return Ok(log);
            }
            self.apply_event(state, &event, rng)?;
            log.push(LoggedEvent {
                clock: state.clock,
                kind: event.kind,
                level: event.level,
                size: event.size,
                mid: state.mid_price(self.params.tick)?,
                ref_price: state.ref_price(self.params.tick),
            });
        }
    }

    /// Applies exactly `n` endogenous events (event-indexed experiments).
    pub fn step_events(
        &self,
        state: &mut LobState,
        n: usize,
        rng: &mut Rng,
    ) -> Result<Vec<LobEvent>> {
        let mut events = Vec::with_capacity(n);
        for _ in 0..n {
            let event = self.next_event(state, rng)?;
            self.apply_event(state, &event, rng)?;
            events.push(event);
        }
        Ok(events)
    }
}

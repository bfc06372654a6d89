//! Optimal-execution environment on top of the book simulator.
//!
//! An episode buys `shares` AES units over `horizon_secs` seconds split into
//! `intervals` trader steps. At each decision point the agent trades at the
//! best ask (never deeper), then the book evolves endogenously for one
//! interval. The reward is the implementation-shortfall increment
//! `filled * (P0 - P_exec)`, with a terminal penalty `penalty * residual`
//! when the horizon is reached with inventory left. For evaluation the
//! residual is instead bought in forced extra steps and its cost folded
//! into the reported shortfall, keeping strategies comparable.

use crate::error::{Result, SimError};
use crate::qrm::{BookSide, LobState, Qrm};
use crate::rng::{stream, Rng};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

/// Observable features, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Time,
    Inventory,
    AskPrice,
    BidVolume,
    AskVolume,
}

impl Feature {
    pub const ALL: [Feature; 5] = [
        Feature::Time,
        Feature::Inventory,
        Feature::AskPrice,
        Feature::BidVolume,
        Feature::AskVolume,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Feature::Time => "time",
            Feature::Inventory => "inventory",
            Feature::AskPrice => "ask_price",
            Feature::BidVolume => "bid_volume",
            Feature::AskVolume => "ask_volume",
        }
    }

    pub fn from_label(s: &str) -> Option<Feature> {
        Feature::ALL.iter().copied().find(|f| f.label() == s)
    }
}

/// Episode parameters (defaults follow the reference configuration:
/// 600 s horizon, 25 intervals, 25 shares, unit penalty, three actions,
/// five features).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Episode horizon T in seconds.
    pub horizon_secs: f64,
    /// Number of trader intervals N; decisions happen at k * T / N for
    /// k = 0..N-1 and the terminal penalty is evaluated at T.
    pub intervals: usize,
    /// Shares to buy (AES units).
    pub shares: u64,
    /// Terminal penalty per unexecuted share.
    pub penalty: f64,
    /// Action fractions of the best ask volume; must contain 0 and 1.
    pub actions: Vec<f64>,
    /// Observed features; must contain time and inventory.
    pub features: Vec<Feature>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            horizon_secs: 600.0,
            intervals: 25,
            shares: 25,
            penalty: 1.0,
            actions: vec![0.0, 0.5, 1.0],
            features: Feature::ALL.to_vec(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if !(self.horizon_secs > 0.0) {
            errs.push(format!("horizon_secs must be positive, got {}", self.horizon_secs));
        }
        if self.intervals < 1 {
            errs.push("intervals must be >= 1".into());
        }
        if self.shares < 1 {
            errs.push("shares must be >= 1".into());
        }
        if self.penalty < 0.0 {
            errs.push(format!("penalty must be >= 0, got {}", self.penalty));
        }
        if !self.actions.contains(&0.0) || !self.actions.contains(&1.0) {
            errs.push(format!("actions must contain 0 and 1, got {:?}", self.actions));
        }
        if self.actions.iter().any(|a| !(0.0..=1.0).contains(a)) {
            errs.push(format!("actions must lie in [0, 1], got {:?}", self.actions));
        }
        if !self.features.contains(&Feature::Time) || !self.features.contains(&Feature::Inventory) {
            errs.push("features must contain time and inventory".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    pub fn interval_secs(&self) -> f64 {
        self.horizon_secs / self.intervals as f64
    }
}

/// Raw (unnormalized) observation at a decision point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawObservation {
    /// Seconds since episode start.
    pub time: f64,
    /// Remaining inventory (AES units).
    pub inventory: u64,
    pub ask_price: f64,
    pub bid_volume: u64,
    pub ask_volume: u64,
}

/// Z-score statistics for the price and volume features; time and
/// inventory are mapped linearly to [-1, 1] and need no statistics.
/// The price feature is measured as `(best ask - P0) / tick`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub ask_price: (f64, f64),
    pub bid_volume: (f64, f64),
    pub ask_volume: (f64, f64),
}

impl NormStats {
    /// Identity statistics (mean 0, std 1).
    pub fn identity() -> Self {
        NormStats { ask_price: (0.0, 1.0), bid_volume: (0.0, 1.0), ask_volume: (0.0, 1.0) }
    }
}

/// Observation in raw and normalized form. The normalized vector follows
/// the order of `EnvConfig::features`.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpObservation {
    pub raw: RawObservation,
    pub normalized: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Shares bought this step.
    pub filled: u64,
    /// Execution price (best ask at the decision time); 0 when idle.
    pub exec_price: f64,
    /// Set on outcomes produced by the forced liquidation loop.
    pub forced_final: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: MdpObservation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Result of buying out the residual after the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForcedLiquidation {
    /// Shares bought across the extra steps.
    pub filled: u64,
    /// Shortfall-convention reward of those fills: `sum filled * (P0 - P)`.
    pub reward: f64,
    /// Extra trader steps consumed.
    pub extra_steps: usize,
}

/// One environment drives one episode at a time; run several instances in
/// parallel for evaluation. The RNG is owned so parallel episodes derived
/// from distinct streams stay independent and reproducible.
pub struct ExecEnv<'a> {
    qrm: &'a Qrm,
    config: EnvConfig,
    stats: NormStats,
    rng: Rng,
    state: LobState,
    inventory: u64,
    step_index: usize,
    arrival_mid: f64,
    done: bool,
    started: bool,
}

impl<'a> ExecEnv<'a> {
    pub fn new(qrm: &'a Qrm, config: EnvConfig, stats: Option<NormStats>, rng: Rng) -> Result<Self> {
        config.validate().map_err(SimError::ConfigViolations)?;
        Ok(ExecEnv {
            qrm,
            config,
            stats: stats.unwrap_or_else(NormStats::identity),
            rng,
            state: LobState::new(0, qrm.params().depth),
            inventory: 0,
            step_index: 0,
            arrival_mid: 0.0,
            done: true,
            started: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Arrival mid-price P0 recorded at reset.
    pub fn arrival_price(&self) -> f64 {
        self.arrival_mid
    }

    pub fn inventory(&self) -> u64 {
        self.inventory
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn book(&self) -> &LobState {
        &self.state
    }

    /// Starts a fresh episode: book from the invariant distribution at the
    /// configured reference price, full inventory, clock zero. Books that
    /// cannot quote both sides are resampled.
    pub fn reset(&mut self) -> Result<MdpObservation> {
        loop {
            self.state = self.qrm.sample_invariant_book(&mut self.rng);
            if self.state.mid_quarter_ticks().is_ok() {
                break;
            }
        }
        self.inventory = self.config.shares;
        self.step_index = 0;
        self.arrival_mid = self.state.mid_price(self.qrm.params().tick)?;
        self.done = false;
        self.started = true;
        self.observation()
    }

    /// Current observation; requires a quotable book.
    pub fn observation(&self) -> Result<MdpObservation> {
        let tick = self.qrm.params().tick;
        let quotes = self.state.quotes(tick)?;
        let (_, ask_volume) = self.state.best(BookSide::Ask).unwrap_or((0, 0));
        let (_, bid_volume) = self.state.best(BookSide::Bid).unwrap_or((0, 0));
        let raw = RawObservation {
            time: self.step_index as f64 * self.config.interval_secs(),
            inventory: self.inventory,
            ask_price: quotes.best_ask,
            bid_volume,
            ask_volume,
        };
        Ok(MdpObservation {
            normalized: self.normalize(&raw),
            raw,
        })
    }

    /// Maps a raw observation onto the configured feature vector: time and
    /// inventory linearly into [-1, 1], price (in ticks above P0) and
    /// volumes z-scored with the stored statistics.
    pub fn normalize(&self, raw: &RawObservation) -> Vec<f64> {
        let tick = self.qrm.params().tick;
        self.config
            .features
            .iter()
            .map(|f| match f {
                Feature::Time => 2.0 * raw.time / self.config.horizon_secs - 1.0,
                Feature::Inventory => {
                    2.0 * raw.inventory as f64 / self.config.shares as f64 - 1.0
                }
                Feature::AskPrice => {
                    let ticks_above = (raw.ask_price - self.arrival_mid) / tick;
                    (ticks_above - self.stats.ask_price.0) / self.stats.ask_price.1
                }
                Feature::BidVolume => {
                    (raw.bid_volume as f64 - self.stats.bid_volume.0) / self.stats.bid_volume.1
                }
                Feature::AskVolume => {
                    (raw.ask_volume as f64 - self.stats.ask_volume.0) / self.stats.ask_volume.1
                }
            })
            .collect()
    }

    /// Takes an action expressed as a fraction of the best ask volume.
    pub fn step_fraction(&mut self, fraction: f64) -> Result<StepOutcome> {
        if self.done {
            return Err(SimError::EpisodeFinished);
        }
        let (_, best) = self
            .state
            .best(BookSide::Ask)
            .ok_or(SimError::DegenerateBook { side: "ask" })?;
        let want = (fraction * best as f64).floor() as u64;
        self.step_shares(want)
    }

    /// Buys `shares` at the best ask (clamped to the standing best volume
    /// and the remaining inventory), then advances one trader interval.
    pub fn step_shares(&mut self, shares: u64) -> Result<StepOutcome> {
        if self.done {
            return Err(SimError::EpisodeFinished);
        }
        let tick = self.qrm.params().tick;
        let (_, best) = self
            .state
            .best(BookSide::Ask)
            .ok_or(SimError::DegenerateBook { side: "ask" })?;
        let size = shares.min(best).min(self.inventory);
        let mut reward = 0.0;
        let mut exec_price = 0.0;
        if size > 0 {
            let (fill, _) =
                self.qrm
                    .apply_market_order(&mut self.state, BookSide::Ask, size, &mut self.rng)?;
            exec_price = fill.price;
            reward += size as f64 * (self.arrival_mid - fill.price);
            self.inventory -= size;
        }
        self.step_index += 1;
        if self.inventory == 0 {
            self.done = true;
        } else {
            self.qrm
                .simulate_until(&mut self.state, self.config.interval_secs(), &mut self.rng)?;
            if self.step_index == self.config.intervals {
                // Horizon reached with inventory left: terminal penalty.
                reward -= self.config.penalty * self.inventory as f64;
                self.done = true;
            }
        }
        Ok(StepOutcome {
            observation: self.observation()?,
            reward,
            done: self.done,
            info: StepInfo { filled: size, exec_price, forced_final: false },
        })
    }

    /// Buys out the residual inventory after the horizon by consuming
    /// best-ask liquidity over extra trader steps (evaluation accounting;
    /// replaces the terminal penalty in reported shortfall).
    pub fn forced_final_trade(&mut self) -> Result<ForcedLiquidation> {
        if !self.done || !self.started {
            return Err(SimError::Experiment(
                "forced liquidation applies to finished episodes only".into(),
            ));
        }
        let mut out = ForcedLiquidation::default();
        while self.inventory > 0 {
            let (_, best) = self
                .state
                .best(BookSide::Ask)
                .ok_or(SimError::DegenerateBook { side: "ask" })?;
            let size = best.min(self.inventory);
            if size > 0 {
                let (fill, _) = self.qrm.apply_market_order(
                    &mut self.state,
                    BookSide::Ask,
                    size,
                    &mut self.rng,
                )?;
                out.filled += size;
                out.reward += size as f64 * (self.arrival_mid - fill.price);
                self.inventory -= size;
            }
            if self.inventory > 0 {
                self.qrm.simulate_until(
                    &mut self.state,
                    self.config.interval_secs(),
                    &mut self.rng,
                )?;
                out.extra_steps += 1;
            }
        }
        Ok(out)
    }
}

/// Collects z-score statistics from warm-up rollouts under a uniform-random
/// policy. The statistics are frozen alongside the trained network so
/// training and evaluation normalize identically. A constant feature gets
/// its standard deviation clamped to 1.
pub fn normalization_stats(
    qrm: &Qrm,
    config: &EnvConfig,
    n_warmup: usize,
    seed: u64,
) -> Result<NormStats> {
    let mut price = Vec::new();
    let mut bidv = Vec::new();
    let mut askv = Vec::new();
    let tick = qrm.params().tick;
    for episode in 0..n_warmup as u64 {
        let mut env = ExecEnv::new(qrm, config.clone(), None, stream(seed, "warmup", episode))?;
        let mut policy_rng = stream(seed, "warmup-policy", episode);
        let obs = match env.reset() {
            Ok(o) => o,
            Err(SimError::DegenerateBook { .. }) => continue,
            Err(e) => return Err(e),
        };
        let p0 = env.arrival_price();
        let mut record = |raw: &RawObservation| {
            price.push((raw.ask_price - p0) / tick);
            bidv.push(raw.bid_volume as f64);
            askv.push(raw.ask_volume as f64);
        };
        record(&obs.raw);
        while !env.is_done() {
            let idx = policy_rng.gen_range(0..config.actions.len());
            match env.step_fraction(config.actions[idx]) {
                Ok(out) => {
                    if !out.done {
                        record(&out.observation.raw);
                    }
                }
                Err(SimError::DegenerateBook { .. }) => break,
                Err(e) => return Err(e),
            }
        }
    }
    if price.is_empty() {
        return Err(SimError::Experiment("no warm-up samples collected".into()));
    }
    let mean_std = |xs: &[f64]| {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        (mean, if std > 1e-12 { std } else { 1.0 })
    };
    Ok(NormStats {
        ask_price: mean_std(&price),
        bid_volume: mean_std(&bidv),
        ask_volume: mean_std(&askv),
    })
}

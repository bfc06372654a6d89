//! Queue-size-dependent event intensities and their invariant distributions.
//!
//! Each price level carries three rate arrays indexed by the current queue
//! size `n` (in AES units): limit-order arrivals `lambda_L(n)`, market orders
//! `lambda_M(n)` and cancellations `lambda_C(n)`. Beyond the tabulated range
//! the rates are held at their last value, so every table defines a proper
//! birth-death process on the whole of `N`. Bid and ask share the same table
//! (bid-ask symmetry).

use crate::error::{Result, SimError};
use serde::{Deserialize, Serialize};

/// Rates for one price level, tabulated for queue sizes `0..=n_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRates {
    /// Limit-order arrival rate per second, indexed by queue size.
    pub limit: Vec<f64>,
    /// Market-order consumption rate per second.
    pub market: Vec<f64>,
    /// Cancellation rate per second.
    pub cancel: Vec<f64>,
}

impl LevelRates {
    fn at(rates: &[f64], n: u64) -> f64 {
        let idx = (n as usize).min(rates.len() - 1);
        rates[idx]
    }

    pub fn limit_at(&self, n: u64) -> f64 {
        Self::at(&self.limit, n)
    }

    pub fn market_at(&self, n: u64) -> f64 {
        Self::at(&self.market, n)
    }

    pub fn cancel_at(&self, n: u64) -> f64 {
        Self::at(&self.cancel, n)
    }

    /// Birth rate `f(n)`.
    pub fn birth_at(&self, n: u64) -> f64 {
        self.limit_at(n)
    }

    /// Death rate `g(n)`: market orders plus cancellations.
    pub fn death_at(&self, n: u64) -> f64 {
        self.market_at(n) + self.cancel_at(n)
    }

    /// Total event rate with the queue at size `n`.
    pub fn total_at(&self, n: u64) -> f64 {
        self.limit_at(n) + self.market_at(n) + self.cancel_at(n)
    }
}

/// Per-level rate tables for the `K` visible levels of one side of the book.
/// `levels[0]` is the level closest to the reference price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityTable {
    pub levels: Vec<LevelRates>,
}

impl IntensityTable {
    /// Number of visible levels per side.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, level: usize) -> &LevelRates {
        &self.levels[level - 1]
    }

    /// Validates structural invariants, collecting every violation.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.levels.is_empty() {
            errs.push("intensity table has no levels".to_string());
        }
        for (li, lv) in self.levels.iter().enumerate() {
            let level = li + 1;
            for (name, arr) in [("limit", &lv.limit), ("market", &lv.market), ("cancel", &lv.cancel)] {
                if arr.is_empty() {
                    errs.push(format!("level {level}: {name} rate array is empty"));
                    continue;
                }
                for (n, &r) in arr.iter().enumerate() {
                    if !r.is_finite() || r < 0.0 {
                        errs.push(format!("level {level}: {name} rate at size {n} is {r} (must be finite and >= 0)"));
                    }
                }
            }
            if lv.market.first().copied().unwrap_or(0.0) != 0.0 {
                errs.push(format!("level {level}: market rate at size 0 must be 0"));
            }
            if lv.cancel.first().copied().unwrap_or(0.0) != 0.0 {
                errs.push(format!("level {level}: cancel rate at size 0 must be 0"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// Built-in table: K=3 levels tabulated for queue sizes 0..=30.
    ///
    /// Shapes per level: arrivals decay harmonically in the queue size,
    /// cancellations grow linearly, market orders concentrate on small
    /// queues (and on the inner level). All rates are rescaled so that the
    /// stationary total event rate of the six visible queues is 7 events
    /// per second.
    pub fn default_table() -> IntensityTable {
        const N_MAX: usize = 30;
        // (arrival scale, arrival decay, cancel slope, market scale, market decay)
        const SHAPES: [(f64, f64, f64, f64, f64); 3] = [
            (5.0, 0.60, 0.100, 1.40, 0.35),
            (3.0, 0.42, 0.085, 0.18, 0.50),
            (2.8, 0.38, 0.065, 0.07, 0.50),
        ];
        let mut levels = Vec::with_capacity(SHAPES.len());
        for (a, b, c, m, w) in SHAPES {
            let mut limit = Vec::with_capacity(N_MAX + 1);
            let mut market = Vec::with_capacity(N_MAX + 1);
            let mut cancel = Vec::with_capacity(N_MAX + 1);
            for n in 0..=N_MAX {
                let nf = n as f64;
                limit.push(a / (1.0 + b * nf));
                market.push(if n == 0 { 0.0 } else { m / (1.0 + w * (nf - 1.0)) });
                cancel.push(c * nf);
            }
            levels.push(LevelRates { limit, market, cancel });
        }
        let mut table = IntensityTable { levels };

        // Rescale so the stationary event rate over both sides is 7/s exactly.
        // Scaling all rates by a constant leaves every ratio, hence every
        // invariant distribution, unchanged.
        let mut rate = 0.0;
        for level in 1..=table.depth() {
            let pi = invariant_distribution_auto(table.level(level))
                .expect("default table must be ergodic");
            let lv = table.level(level);
            let per_queue: f64 = pi
                .iter()
                .enumerate()
                .map(|(n, p)| p * lv.total_at(n as u64))
                .sum();
            rate += 2.0 * per_queue;
        }
        let scale = 7.0 / rate;
        for lv in &mut table.levels {
            for arr in [&mut lv.limit, &mut lv.market, &mut lv.cancel] {
                for r in arr.iter_mut() {
                    *r *= scale;
                }
            }
        }
        table
    }
}

/// Arrival/departure ratio `rho(n) = lambda_L(n) / (lambda_C(n+1) + lambda_M(n+1))`.
///
/// A zero arrival rate yields 0 regardless of the denominator; a positive
/// arrival rate with zero departure rate above it means the queue can grow
/// but never shrink back, which is reported as a non-ergodic configuration.
pub fn arrival_departure_ratio(rates: &LevelRates, n: u64) -> Result<f64> {
    let up = rates.limit_at(n);
    if up == 0.0 {
        return Ok(0.0);
    }
    let down = rates.death_at(n + 1);
    if down == 0.0 {
        return Err(SimError::NonErgodic {
            level: 0,
            reason: format!("positive arrival rate but zero departure rate above size {n}"),
        });
    }
    Ok(up / down)
}

/// Invariant distribution of one queue, truncated to `0..=n_max`.
///
/// `pi(n) = pi(0) * prod_{j=1..n} rho(j-1)`, normalized over the truncation.
/// For a birth-death chain this equals the stationary vector of the
/// truncated generator exactly, not just approximately.
pub fn invariant_distribution(rates: &LevelRates, n_max: usize) -> Result<Vec<f64>> {
    let mut terms = Vec::with_capacity(n_max + 1);
    terms.push(1.0f64);
    let mut prod = 1.0f64;
    for n in 1..=n_max {
        prod *= arrival_departure_ratio(rates, (n - 1) as u64)?;
        terms.push(prod);
        if !prod.is_finite() {
            return Err(SimError::NonErgodic {
                level: 0,
                reason: "partial products of arrival/departure ratios diverge".to_string(),
            });
        }
    }
    // The tabulated tail freezes the rates, so the tail ratio is constant;
    // it must be < 1 for the infinite chain to be positive recurrent.
    let tail = arrival_departure_ratio(rates, n_max as u64)?;
    if tail >= 1.0 {
        return Err(SimError::NonErgodic {
            level: 0,
            reason: format!("tail arrival/departure ratio {tail} >= 1: distribution not summable"),
        });
    }
    let total: f64 = terms.iter().sum();
    Ok(terms.into_iter().map(|t| t / total).collect())
}

/// Invariant distribution truncated automatically so the neglected tail mass
/// is below 1e-12 (relative).
pub fn invariant_distribution_auto(rates: &LevelRates) -> Result<Vec<f64>> {
    let n_table = rates.limit.len() - 1;
    let tail = arrival_departure_ratio(rates, n_table as u64)?;
    if tail >= 1.0 {
        return Err(SimError::NonErgodic {
            level: 0,
            reason: format!("tail arrival/departure ratio {tail} >= 1: distribution not summable"),
        });
    }
    // Walk out past the table until the frozen-tail geometric remainder is
    // negligible next to the accumulated mass.
    let mut n_max = n_table.max(8);
    loop {
        let mut sum = 1.0f64;
        let mut prod = 1.0f64;
        for n in 1..=n_max {
            prod *= arrival_departure_ratio(rates, (n - 1) as u64)?;
            sum += prod;
        }
        let remainder = prod * tail / (1.0 - tail);
        if remainder <= 1e-12 * sum || n_max >= 65_536 {
            return invariant_distribution(rates, n_max);
        }
        n_max *= 2;
    }
}

/// Witness report for the two sufficient ergodicity conditions:
/// (i) the per-queue drift `f - g` is at most `-delta0` above some size
/// `c_bound`; (ii) the summed arrival rates admit a finite bound `H`.
#[derive(Debug, Clone)]
pub struct ErgodicityReport {
    pub passes: bool,
    /// Size above which every level has strictly negative drift.
    pub c_bound: Option<u64>,
    /// Uniform drift margin above `c_bound` (0 when condition (i) fails).
    pub delta0: f64,
    /// Bound on the summed arrival rates over both sides.
    pub h_bound: f64,
    /// Human-readable description of each violated condition.
    pub violations: Vec<String>,
}

/// Checks the sufficient conditions for ergodicity on a tabulated intensity
/// set (both book sides share the table, so sums count each level twice).
///
/// Condition (ii) is only certified when the arrival-rate arrays have
/// stopped growing at the truncation boundary; a table still increasing at
/// `n_max` is treated as a sample of an unbounded intensity and rejected.
pub fn check_ergodicity(table: &IntensityTable) -> ErgodicityReport {
    let mut violations = Vec::new();
    let mut c_bound: u64 = 0;
    let mut delta0 = f64::INFINITY;
    let mut cond_i = true;

    for (li, lv) in table.levels.iter().enumerate() {
        let level = li + 1;
        let n_table = lv.limit.len().max(lv.market.len()).max(lv.cancel.len()) - 1;
        // Drift is constant beyond the table, so checking 0..=n_table covers
        // the whole state space.
        let drift = |n: u64| lv.birth_at(n) - lv.death_at(n);
        let tail_drift = drift(n_table as u64);
        if tail_drift >= 0.0 {
            cond_i = false;
            violations.push(format!(
                "condition (i): level {level} has non-negative drift {tail_drift:.6} for all sizes >= {n_table}"
            ));
            continue;
        }
        // Smallest size above which the drift stays negative.
        let mut level_bound = 0u64;
        for n in (0..=n_table as u64).rev() {
            if drift(n) >= 0.0 {
                level_bound = n;
                break;
            }
        }
        c_bound = c_bound.max(level_bound);
        for n in (level_bound + 1)..=(n_table as u64) {
            delta0 = delta0.min(-drift(n));
        }
    }

    let mut h_bound = 0.0;
    for (li, lv) in table.levels.iter().enumerate() {
        let level = li + 1;
        let sup = lv.limit.iter().cloned().fold(0.0f64, f64::max);
        h_bound += 2.0 * sup;
        let len = lv.limit.len();
        if len >= 2 && lv.limit[len - 1] > lv.limit[len - 2] {
            violations.push(format!(
                "condition (ii): level {level} arrival rates still increasing at the truncation boundary \
                 (size {}: {} > {}); bound on summed arrivals not certified",
                len - 1,
                lv.limit[len - 1],
                lv.limit[len - 2]
            ));
        }
    }

    let passes = violations.is_empty();
    ErgodicityReport {
        passes,
        c_bound: if cond_i { Some(c_bound) } else { None },
        delta0: if cond_i && delta0.is_finite() { delta0 } else { 0.0 },
        h_bound,
        violations,
    }
}

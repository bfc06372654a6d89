//! Market-impact experiments: controlled best-ask depletions, half-volume
//! trades, short/long-term impact heatmaps over `(theta, theta_reinit)` and
//! repeated-depletion price paths, next to the closed-form predictions for
//! the immediate jump and the next-event drift.
//!
//! All experiments start from an invariant book conditioned on nonempty
//! queues with the reference price equal to the mid, send one buy market
//! order, then track the mid-price event by event. Simulations are
//! embarrassingly parallel; per-simulation seeds derive from the master
//! seed, so results do not depend on thread scheduling.

use crate::error::{Result, SimError};
use crate::qrm::{BookSide, EventKind, Qrm, QrmParams};
use crate::rng::stream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How runs are filtered by their first post-trade event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefillConditioning {
    #[default]
    None,
    /// Keep runs whose first post-trade event is a limit arrival at the
    /// inner bid level.
    BidRefillFirst,
    /// Keep runs whose first post-trade event is a limit arrival at the
    /// inner ask level.
    AskRefillFirst,
}

impl RefillConditioning {
    fn matches(self, kind: EventKind, level: i32) -> bool {
        match self {
            RefillConditioning::None => true,
            RefillConditioning::BidRefillFirst => kind == EventKind::LimitArrival && level == -1,
            RefillConditioning::AskRefillFirst => kind == EventKind::LimitArrival && level == 1,
        }
    }
}

/// Specification of one depletion experiment.
#[derive(Debug, Clone)]
pub struct ImpactExperimentSpec {
    /// Independent simulations to average.
    pub n_sims: usize,
    /// Post-trade events to track.
    pub horizon: usize,
    /// Fraction of the best ask consumed: 1.0 deletes the queue, 0.5 buys
    /// the floor of half of it.
    pub mo_fraction: f64,
    pub conditioning: RefillConditioning,
    /// Replaces `theta` of the model for reference curves (e.g. 0.0).
    pub theta_override: Option<f64>,
    pub seed: u64,
}

impl Default for ImpactExperimentSpec {
    fn default() -> Self {
        ImpactExperimentSpec {
            n_sims: 20_000,
            horizon: 76,
            mo_fraction: 1.0,
            conditioning: RefillConditioning::None,
            theta_override: None,
            seed: 0,
        }
    }
}

/// Average mid-price path indexed by event count.
///
/// `path[0]` is the pre-trade mid, `path[1]` the mid right after the trade
/// (and its reference-price response), and `path[1 + j]` the mid after `j`
/// further events. Differences are estimated per simulation, so their
/// standard errors account for the correlation along the path.
#[derive(Debug, Clone)]
pub struct ImpactResult {
    pub path: Vec<f64>,
    /// Standard error of each path entry (sample std / sqrt(n_used)).
    pub se: Vec<f64>,
    /// Mean of `mid[1 + j] - mid[1]` per simulation, `j = 0..=horizon`.
    pub from_post: Vec<f64>,
    pub from_post_se: Vec<f64>,
    jump: (f64, f64),
    /// Simulations that contributed (after conditioning).
    pub n_used: usize,
    /// Simulations discarded because the book degenerated.
    pub n_degenerate: usize,
}

impl ImpactResult {
    /// Mean mid change across the trade itself.
    pub fn immediate_jump(&self) -> f64 {
        self.jump.0
    }

    pub fn immediate_jump_se(&self) -> f64 {
        self.jump.1
    }

    /// Mean mid change over the first post-trade event.
    pub fn next_event_drift(&self) -> f64 {
        self.from_post[1]
    }

    pub fn next_event_drift_se(&self) -> f64 {
        self.from_post_se[1]
    }

    /// Cumulative change from the post-trade mid over `lag` events.
    pub fn cumulative_impact(&self, lag: usize) -> f64 {
        self.from_post[lag]
    }

    pub fn cumulative_impact_se(&self, lag: usize) -> f64 {
        self.from_post_se[lag]
    }
}

/// Sequential mean/SE accumulator over equal-length sample vectors.
struct PathAccumulator {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    n: usize,
}

impl PathAccumulator {
    fn new(len: usize) -> Self {
        PathAccumulator { sum: vec![0.0; len], sumsq: vec![0.0; len], n: 0 }
    }

    fn add(&mut self, xs: impl Iterator<Item = f64>) {
        for (i, x) in xs.enumerate() {
            self.sum[i] += x;
            self.sumsq[i] += x * x;
        }
        self.n += 1;
    }

    fn mean_se(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let se = self
            .sumsq
            .iter()
            .zip(&mean)
            .map(|(s2, m)| {
                let var = (s2 / n - m * m).max(0.0) * n / (n - 1.0).max(1.0);
                (var / n).sqrt()
            })
            .collect();
        (mean, se)
    }
}

/// Expected mid-price jump from consuming the entire best ask when the
/// reference price equals the mid: `(1 + theta * theta_reinit) * tick / 2`.
pub fn theoretical_jump(theta: f64, theta_reinit: f64, tick: f64) -> f64 {
    (1.0 + theta * theta_reinit) * tick / 2.0
}

/// First-order expected mid-price change at the next book event after the
/// depletion: `(theta * (2 - theta_reinit) - 1) * tick / 2`. Positive means
/// the quote adjustment continues in the trade direction, negative means
/// mean reversion.
pub fn theoretical_next_drift(theta: f64, theta_reinit: f64, tick: f64) -> f64 {
    (theta * (2.0 - theta_reinit) - 1.0) * tick / 2.0
}

fn with_theta(params: &QrmParams, theta_override: Option<f64>) -> QrmParams {
    let mut p = params.clone();
    if let Some(t) = theta_override {
        p.theta = t;
    }
    p
}

struct RunPath {
    mids: Vec<f64>,
    matched: bool,
}

/// One depletion run: sample a nonempty invariant book, send the buy order,
/// then track `horizon` events. Returns `None` when the book degenerates.
fn run_once(qrm: &Qrm, spec: &ImpactExperimentSpec, sim: u64) -> Option<RunPath> {
    let mut rng = stream(spec.seed, "impact-sim", sim);
    let tick = qrm.params().tick;
    let mut state = qrm.sample_nonempty_book(&mut rng);
    let mut mids = Vec::with_capacity(spec.horizon + 2);
    mids.push(state.mid_price(tick).ok()?);

    let (_, best) = state.best(BookSide::Ask).expect("nonempty book");
    let size = if spec.mo_fraction >= 1.0 {
        best
    } else {
        (spec.mo_fraction * best as f64).floor() as u64
    };
    qrm.apply_market_order(&mut state, BookSide::Ask, size, &mut rng).ok()?;
    mids.push(state.mid_price(tick).ok()?);

    let mut matched = spec.conditioning == RefillConditioning::None;
    for j in 0..spec.horizon {
        let event = qrm.next_event(&state, &mut rng).ok()?;
        qrm.apply_event(&mut state, &event, &mut rng).ok()?;
        if j == 0 {
            matched = spec.conditioning.matches(event.kind, event.level);
        }
        mids.push(state.mid_price(tick).ok()?);
    }
    Some(RunPath { mids, matched })
}

/// Average mid-price response to a single buy market order.
pub fn depletion_response(spec: &ImpactExperimentSpec, params: &QrmParams) -> Result<ImpactResult> {
    let qrm = Qrm::new(with_theta(params, spec.theta_override))?;
    let len = spec.horizon + 2;
    // Runs are independent and seeded by index; collecting preserves index
    // order so the sequential reduction below is bit-reproducible no matter
    // how rayon schedules the work.
    let runs: Vec<Option<RunPath>> = (0..spec.n_sims as u64)
        .into_par_iter()
        .map(|sim| run_once(&qrm, spec, sim))
        .collect();
    let mut acc = PathAccumulator::new(len);
    let mut rel = PathAccumulator::new(len - 1);
    let mut jump = PathAccumulator::new(1);
    let mut n_degenerate = 0usize;
    for run in runs {
        match run {
            Some(run) if run.matched => {
                acc.add(run.mids.iter().copied());
                rel.add(run.mids[1..].iter().map(|m| m - run.mids[1]));
                jump.add(std::iter::once(run.mids[1] - run.mids[0]));
            }
            Some(_) => {}
            None => n_degenerate += 1,
        }
    }
    if acc.n == 0 {
        return Err(SimError::Experiment(format!(
            "no runs matched conditioning {:?} out of {} simulations ({} degenerate)",
            spec.conditioning, spec.n_sims, n_degenerate
        )));
    }
    let n_used = acc.n;
    let (path, se) = acc.mean_se();
    let (from_post, from_post_se) = rel.mean_se();
    let (jm, js) = jump.mean_se();
    Ok(ImpactResult {
        path,
        se,
        from_post,
        from_post_se,
        jump: (jm[0], js[0]),
        n_used,
        n_degenerate,
    })
}

/// Per-cell scalar over a `(theta, theta_reinit)` grid.
#[derive(Debug, Clone)]
pub struct ImpactHeatmap {
    pub thetas: Vec<f64>,
    pub theta_reinits: Vec<f64>,
    /// `values[i][j]` corresponds to `(thetas[i], theta_reinits[j])`.
    pub values: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
}

/// Which scalar each heatmap cell reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapKind {
    /// Mid change over the first post-trade event.
    ShortTerm,
    /// Mid change from the post-trade mid over a lag of events.
    LongTerm { lag: usize },
}

/// Evenly spaced grid endpoints included.
pub fn grid(min: f64, max: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![min];
    }
    (0..steps)
        .map(|i| min + (max - min) * i as f64 / (steps - 1) as f64)
        .collect()
}

/// Monte Carlo heatmap of the post-trade drift over a parameter grid.
pub fn impact_heatmap(
    spec: &ImpactExperimentSpec,
    params: &QrmParams,
    thetas: &[f64],
    theta_reinits: &[f64],
    kind: HeatmapKind,
) -> Result<ImpactHeatmap> {
    let horizon = match kind {
        HeatmapKind::ShortTerm => 1,
        HeatmapKind::LongTerm { lag } => lag,
    };
    let cells: Vec<(usize, usize)> = (0..thetas.len())
        .flat_map(|i| (0..theta_reinits.len()).map(move |j| (i, j)))
        .collect();
    let results: Vec<Result<(usize, usize, f64, f64)>> = cells
        .par_iter()
        .map(|&(i, j)| {
            let mut cell_params = params.clone();
            cell_params.theta = thetas[i];
            cell_params.theta_reinit = theta_reinits[j];
            let cell_spec = ImpactExperimentSpec {
                horizon,
                seed: spec
                    .seed
                    .wrapping_add((i * theta_reinits.len() + j) as u64 * 0x9e37_79b9),
                ..spec.clone()
            };
            let res = depletion_response(&cell_spec, &cell_params)?;
            let (value, se) = match kind {
                HeatmapKind::ShortTerm => (res.next_event_drift(), res.next_event_drift_se()),
                HeatmapKind::LongTerm { lag } => {
                    (res.cumulative_impact(lag), res.cumulative_impact_se(lag))
                }
            };
            Ok((i, j, value, se))
        })
        .collect();
    let mut values = vec![vec![0.0; theta_reinits.len()]; thetas.len()];
    let mut se = vec![vec![0.0; theta_reinits.len()]; thetas.len()];
    for r in results {
        let (i, j, v, s) = r?;
        values[i][j] = v;
        se[i][j] = s;
    }
    Ok(ImpactHeatmap {
        thetas: thetas.to_vec(),
        theta_reinits: theta_reinits.to_vec(),
        values,
        se,
    })
}

/// Average mid-price path (sampled once per second) while a trader deletes
/// the best ask every `interval` seconds, `n_trades` times.
pub fn repeated_depletion_path(
    interval: f64,
    n_trades: usize,
    n_sims: usize,
    params: &QrmParams,
    seed: u64,
) -> Result<ImpactResult> {
    if interval <= 0.0 {
        return Err(SimError::Experiment("trade interval must be positive".into()));
    }
    let qrm = Qrm::new(params.clone())?;
    let tick = params.tick;
    let total_secs = (interval * n_trades.max(1) as f64).ceil() as usize + 1;
    let len = total_secs + 1;
    let run_one = |sim: u64| -> Option<Vec<f64>> {
        let mut rng = stream(seed, "repeat-sim", sim);
        let mut state = qrm.sample_nonempty_book(&mut rng);
        let mut mids = Vec::with_capacity(len);
        mids.push(state.mid_price(tick).ok()?);
        let mut trades_done = 0usize;
        for sec in 1..len {
            // Trades fire at multiples of `interval`.
            while trades_done < n_trades && (trades_done as f64 + 1.0) * interval <= sec as f64 {
                let (_, best) = state.best(BookSide::Ask)?;
                qrm.apply_market_order(&mut state, BookSide::Ask, best, &mut rng).ok()?;
                trades_done += 1;
            }
            qrm.simulate_until(&mut state, 1.0, &mut rng).ok()?;
            mids.push(state.mid_price(tick).ok()?);
        }
        Some(mids)
    };
    let runs: Vec<Option<Vec<f64>>> = (0..n_sims as u64).into_par_iter().map(run_one).collect();
    let mut acc = PathAccumulator::new(len);
    let mut rel = PathAccumulator::new(len);
    let mut jump = PathAccumulator::new(1);
    let mut n_degenerate = 0usize;
    for run in runs {
        match run {
            Some(mids) => {
                acc.add(mids.iter().copied());
                // Time-gridded path: changes are measured from the start.
                rel.add(mids.iter().map(|m| m - mids[0]));
                jump.add(std::iter::once(mids[len - 1] - mids[0]));
            }
            None => n_degenerate += 1,
        }
    }
    if acc.n == 0 {
        return Err(SimError::Experiment("all repeated-depletion runs degenerated".into()));
    }
    let n_used = acc.n;
    let (path, se) = acc.mean_se();
    let (from_post, from_post_se) = rel.mean_se();
    let (jm, js) = jump.mean_se();
    Ok(ImpactResult {
        path,
        se,
        from_post,
        from_post_se,
        jump: (jm[0], js[0]),
        n_used,
        n_degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn theoretical_jump_values() {
        assert_relative_eq!(theoretical_jump(0.7, 0.85, 0.01), 0.007975, epsilon = 1e-12);
        assert_relative_eq!(theoretical_jump(0.0, 0.37, 0.01), 0.005, epsilon = 1e-12);
        assert_relative_eq!(theoretical_jump(1.0, 1.0, 0.01), 0.01, epsilon = 1e-12);
    }

    #[test]
    fn theoretical_next_drift_values() {
        assert_relative_eq!(theoretical_next_drift(0.7, 0.85, 0.01), -0.000975, epsilon = 1e-12);
        assert_relative_eq!(theoretical_next_drift(0.9, 0.6, 0.01), 0.0013, epsilon = 1e-12);
        assert_relative_eq!(theoretical_next_drift(0.8, 0.75, 0.01), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn immediate_jump_matches_formula_small_sample() {
        let params = QrmParams::default();
        let spec = ImpactExperimentSpec {
            n_sims: 4000,
            horizon: 1,
            seed: 11,
            ..Default::default()
        };
        let res = depletion_response(&spec, &params).unwrap();
        let theory = theoretical_jump(0.7, 0.85, 0.01);
        let err = (res.immediate_jump() - theory).abs();
        let se = res.immediate_jump_se();
        assert!(err < 3.5 * se.max(1e-6), "err {err} vs se {se}");
    }

    #[test]
    fn singleton_grid_matches_depletion_response() {
        let params = QrmParams::default();
        let spec = ImpactExperimentSpec { n_sims: 1500, horizon: 1, seed: 5, ..Default::default() };
        let hm = impact_heatmap(&spec, &params, &[0.7], &[0.85], HeatmapKind::ShortTerm).unwrap();
        let single_spec = ImpactExperimentSpec {
            seed: spec.seed.wrapping_add(0),
            horizon: 1,
            ..spec.clone()
        };
        let res = depletion_response(&single_spec, &params).unwrap();
        assert_relative_eq!(hm.values[0][0], res.next_event_drift(), epsilon = 1e-12);
    }

    #[test]
    fn zero_trades_path_is_flat_within_noise() {
        let params = QrmParams::default();
        let res = repeated_depletion_path(5.0, 0, 1500, &params, 7).unwrap();
        let drift = *res.from_post.last().unwrap();
        let se = *res.from_post_se.last().unwrap();
        assert!(drift.abs() < 4.0 * se.max(1e-9), "drift {drift}, se {se}");
    }

    #[test]
    fn repeated_depletion_deterministic_under_seed() {
        let params = QrmParams::default();
        let a = repeated_depletion_path(2.0, 3, 200, &params, 42).unwrap();
        let b = repeated_depletion_path(2.0, 3, 200, &params, 42).unwrap();
        assert_eq!(a.path, b.path);
        assert_eq!(a.n_used, b.n_used);
    }

    #[test]
    fn conditioning_with_no_matching_runs_errors() {
        let spec = ImpactExperimentSpec {
            n_sims: 0,
            horizon: 1,
            conditioning: RefillConditioning::BidRefillFirst,
            seed: 3,
            ..Default::default()
        };
        let err = depletion_response(&spec, &QrmParams::default()).unwrap_err();
        assert!(err.to_string().contains("no runs matched"));
    }
}

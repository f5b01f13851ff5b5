//! Closed-loop Monte-Carlo evaluation.
//!
//! Each island gets a radius record `pool_size` periods deep at every step
//! of the run window. A repetition shuffles the record indices once: the
//! first `N` are the training observations (shared by every step, so each
//! observation is one past tide), the rest form the validation pool from
//! which the realized radius at each step is drawn. Draws depend only on the
//! seed and the repetition index, so controllers are compared on paired
//! realizations, and training sets for different `N` are nested prefixes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Method, ScenarioConfig};
use crate::error::{Error, Result};
use crate::mpc::{receding_horizon_run, Controller, RunLog};
use crate::par;
use crate::tide_field::{detect_islands, Island, ObstacleTimeline, RadiusRecord, TimeGrid};

/// Largest fraction of invalid runs a batch tolerates.
pub const MAX_INVALID_FRACTION: f64 = 0.10;

/// Islands and radius records measured once per scenario.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub config: ScenarioConfig,
    pub islands: Vec<Island>,
    pub records: Vec<RadiusRecord>,
    pub grid: TimeGrid,
}

impl PreparedScenario {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let field = config.field()?;
        let islands = detect_islands(&field, config.draft_m, config.ts_h)?;
        let grid = TimeGrid {
            step_h: config.ts_h,
            start_step: config.start_step(),
            len: config.steps() + config.horizon + 1,
        };
        let records = par::map(&islands, |island| {
            RadiusRecord::measure_island(&field, config.draft_m, island, &grid, config.pool_size)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            islands,
            records,
            grid,
        })
    }
}

fn rng_for(seed: u64, repetition: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * repetition as u64 + stream);
    rng
}

/// Record-index permutation of one repetition.
pub fn training_permutation(pool_size: usize, seed: u64, repetition: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pool_size).collect();
    idx.shuffle(&mut rng_for(seed, repetition, 0));
    idx
}

/// Validation-pool index used at each of `len` steps, drawn uniformly from
/// `pool`.
pub fn realization_indices(pool: &[usize], len: usize, seed: u64, repetition: usize) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::domain("validation pool exhausted: no values left after training"));
    }
    let mut rng = rng_for(seed, repetition, 1);
    Ok((0..len).map(|_| pool[rng.random_range(0..pool.len())]).collect())
}

/// Realized radius series of one island, drawn from its validation pool.
pub fn realize_uncertainty(record: &RadiusRecord, pool: &[usize], seed: u64, repetition: usize) -> Result<Vec<f64>> {
    let depth = record.values.first().map_or(0, Vec::len);
    if let Some(&bad) = pool.iter().find(|&&i| i >= depth) {
        return Err(Error::domain(format!("pool index {bad} beyond record depth {depth}")));
    }
    let idx = realization_indices(pool, record.values.len(), seed, repetition)?;
    Ok(record.values.iter().zip(idx).map(|(row, i)| row[i]).collect())
}

/// Controller-visible timelines plus realized radii for one repetition.
pub fn realize_timelines(prep: &PreparedScenario, n: usize, repetition: usize) -> Result<Vec<ObstacleTimeline>> {
    let cfg = &prep.config;
    if n == 0 {
        return Err(Error::domain("sample count N must be at least 1"));
    }
    if cfg.pool_size <= n {
        return Err(Error::domain(format!(
            "validation pool exhausted: pool {} leaves nothing after N = {n}",
            cfg.pool_size
        )));
    }
    let perm = training_permutation(cfg.pool_size, cfg.seed, repetition);
    let (train, pool) = perm.split_at(n);
    prep.records
        .iter()
        .map(|rec| {
            let mut tl = rec.timeline_from(train)?;
            tl.realized_radius = realize_uncertainty(rec, pool, cfg.seed, repetition)?;
            Ok(tl)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub total_cost: f64,
    /// Minimum over steps and islands of `|y - c| - ω_realized` (km).
    pub safety_margin: f64,
    pub collision: bool,
    /// False when the controller aborted the run.
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub log: RunLog,
    /// Clearance to the nearest realized island at each state (km).
    pub clearance: Vec<f64>,
    pub timelines: Vec<ObstacleTimeline>,
}

/// Closed-loop stage costs `Q(y - τ)² + R(Δu)²` over the applied steps plus
/// the terminal `P(y_T - τ_T)²`.
pub fn closed_loop_cost(log: &RunLog, q: f64, p: f64, r: f64, u_init: f64) -> f64 {
    let t_end = log.inputs.len();
    let mut cost = 0.0;
    let mut prev = u_init;
    for t in 0..t_end {
        cost += q * (log.states[t] - log.reference[t]).powi(2) + r * (log.inputs[t] - prev).powi(2);
        prev = log.inputs[t];
    }
    cost + p * (log.states[t_end] - log.reference[t_end]).powi(2)
}

/// Clearance to the nearest island at each logged state, and its minimum.
/// With no islands the waterway half-extent stands in for infinity.
pub fn clearances(states: &[f64], timelines: &[ObstacleTimeline], half_extent: f64) -> (Vec<f64>, f64) {
    let per_step: Vec<f64> = states
        .iter()
        .enumerate()
        .map(|(t, &y)| {
            timelines
                .iter()
                .map(|tl| (y - tl.center_km).abs() - tl.realized_radius[t])
                .fold(half_extent, f64::min)
        })
        .collect();
    let margin = per_step.iter().copied().fold(half_extent, f64::min);
    (per_step, margin)
}

/// One closed-loop run of `controller` on repetition `repetition`.
pub fn simulate(prep: &PreparedScenario, controller: &Controller, n: usize, repetition: usize) -> Result<RunOutcome> {
    let cfg = &prep.config;
    let timelines = realize_timelines(prep, n, repetition)?;
    let log = receding_horizon_run(
        controller,
        &cfg.vessel(),
        &cfg.weights(),
        &timelines,
        &cfg.reference_path()?,
        cfg.x0,
        cfg.initial_speed_kmh,
        cfg.steps(),
    );
    let total_cost = closed_loop_cost(&log, cfg.q, cfg.p, cfg.r, cfg.initial_speed_kmh);
    let half_extent = 0.5 * (cfg.extent_km.1 - cfg.extent_km.0);
    let (clearance, safety_margin) = clearances(&log.states, &timelines, half_extent);
    Ok(RunOutcome {
        metrics: RunMetrics {
            total_cost,
            safety_margin,
            collision: safety_margin < 0.0,
            valid: log.error.is_none(),
        },
        log,
        clearance,
        timelines,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub method: Method,
    pub theta: Option<f64>,
    pub n: usize,
    pub runs: usize,
    pub invalid: usize,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub margin_mean: f64,
    pub margin_std: f64,
    /// Percent of valid runs with a collision.
    pub collision_rate: f64,
    pub metrics: Vec<RunMetrics>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates runs; fails when more than [`MAX_INVALID_FRACTION`] are invalid.
pub fn aggregate(method: Method, theta: Option<f64>, n: usize, metrics: Vec<RunMetrics>) -> Result<BatchResult> {
    let runs = metrics.len();
    if runs == 0 {
        return Err(Error::domain("a batch needs at least one repetition"));
    }
    let valid: Vec<&RunMetrics> = metrics.iter().filter(|m| m.valid).collect();
    let invalid = runs - valid.len();
    if invalid as f64 > MAX_INVALID_FRACTION * runs as f64 {
        return Err(Error::numerical(
            format!("{invalid} of {runs} runs failed for {}", method.as_str()),
            invalid as f64 / runs as f64,
        ));
    }
    let costs: Vec<f64> = valid.iter().map(|m| m.total_cost).collect();
    let margins: Vec<f64> = valid.iter().map(|m| m.safety_margin).collect();
    let (cost_mean, cost_std) = mean_std(&costs);
    let (margin_mean, margin_std) = mean_std(&margins);
    let collisions = valid.iter().filter(|m| m.collision).count();
    Ok(BatchResult {
        method,
        theta,
        n,
        runs,
        invalid,
        cost_mean,
        cost_std,
        margin_mean,
        margin_std,
        collision_rate: 100.0 * collisions as f64 / valid.len() as f64,
        metrics,
    })
}

fn method_of(c: &Controller) -> Method {
    match c {
        Controller::Dr(_) => Method::Dr,
        Controller::Saa(_) => Method::Saa,
        Controller::Cc { .. } => Method::Cc,
        Controller::Free => Method::Free,
    }
}

/// Runs `repetitions` paired runs in parallel (sequentially without the
/// `parallel` feature).
pub fn monte_carlo(prep: &PreparedScenario, controller: &Controller, n: usize) -> Result<BatchResult> {
    let reps: Vec<usize> = (0..prep.config.repetitions).collect();
    let runs = par::map(&reps, |&rep| simulate(prep, controller, n, rep));
    batch_from(controller, n, runs)
}

/// [`monte_carlo`] on the calling thread only.
pub fn monte_carlo_sequential(prep: &PreparedScenario, controller: &Controller, n: usize) -> Result<BatchResult> {
    let reps: Vec<usize> = (0..prep.config.repetitions).collect();
    let runs = par::map_sequential(&reps, |&rep| simulate(prep, controller, n, rep));
    batch_from(controller, n, runs)
}

fn batch_from(controller: &Controller, n: usize, runs: Vec<Result<RunOutcome>>) -> Result<BatchResult> {
    let metrics = runs
        .into_iter()
        .map(|r| r.map(|o| o.metrics))
        .collect::<Result<Vec<_>>>()?;
    aggregate(method_of(controller), controller.theta(), n, metrics)
}

/// DR rows for every `θ`, then SAA and CC, all at `N = n_samples`.
pub fn sweep_theta(prep: &PreparedScenario, thetas: &[f64]) -> Result<Vec<BatchResult>> {
    let cfg = &prep.config;
    if thetas.is_empty() {
        return Err(Error::domain("theta list is empty"));
    }
    let mut controllers = thetas
        .iter()
        .map(|&t| cfg.controller_for(Method::Dr, t))
        .collect::<Result<Vec<_>>>()?;
    controllers.push(cfg.controller_for(Method::Saa, 0.0)?);
    controllers.push(cfg.controller_for(Method::Cc, 0.0)?);
    controllers
        .iter()
        .map(|c| monte_carlo(prep, c, cfg.n_samples))
        .collect()
}

/// DR (at `theta`), SAA and CC rows for every `N`.
pub fn sweep_n(prep: &PreparedScenario, ns: &[usize], theta: f64) -> Result<Vec<BatchResult>> {
    let cfg = &prep.config;
    if ns.is_empty() {
        return Err(Error::domain("N list is empty"));
    }
    let controllers = [
        cfg.controller_for(Method::Dr, theta)?,
        cfg.controller_for(Method::Saa, 0.0)?,
        cfg.controller_for(Method::Cc, 0.0)?,
    ];
    let mut out = Vec::with_capacity(ns.len() * 3);
    for &n in ns {
        for c in &controllers {
            out.push(monte_carlo(prep, c, n)?);
        }
    }
    Ok(out)
}

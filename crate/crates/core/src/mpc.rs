//! Receding-horizon controllers for a single-integrator vessel.
//!
//! With the robust CVaR constraint scalarized into a clearance radius `r*`,
//! avoidance of an interval obstacle at step `k` is the disjunction
//! `y_k ≤ c - r*` (pass BELOW, i.e. before reaching it) or `y_k ≥ c + r*`
//! (ABOVE). Once every active pair is assigned a side the problem is a convex
//! QP; a best-first branch-and-bound over sides recovers the global optimum.
//!
//! Three radius rules share that machinery: the Wasserstein DR rule, its
//! `θ = 0` special case (SAA) and a Gaussian-quantile chance constraint (CC).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::qp::QpProblem;
use crate::risk::{safe_radius, RiskParams, SafeRadius};
use crate::tide_field::{EmpiricalDistribution, ObstacleTimeline};

/// Clearance tolerance used when testing whether a relaxed solution already
/// satisfies a pair (km).
const SIDE_TOL: f64 = 1e-9;
/// Slack above which a solution counts as softened (km).
const SLACK_TOL: f64 = 1e-7;
const MAX_NODES: usize = 50_000;

/// `x_{k+1} = x_k + T_s u_k`, `y = x`, with box bounds on input and state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VesselModel {
    pub ts_h: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub x_min: f64,
    pub x_max: f64,
}

impl VesselModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.ts_h > 0.0) {
            return Err(Error::domain("sampling time must be positive"));
        }
        if !(self.u_min <= self.u_max) {
            return Err(Error::domain("input bounds are inverted"));
        }
        if !(self.x_min <= self.x_max) {
            return Err(Error::domain("state bounds are inverted"));
        }
        Ok(())
    }

    pub fn step(&self, x: f64, u: f64) -> f64 {
        x + self.ts_h * u
    }
}

/// Cost weights and the data of one horizon window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSetup {
    pub horizon: usize,
    pub q: f64,
    pub p: f64,
    pub r: f64,
    pub rho_slack: f64,
    /// `τ_0..τ_K`.
    pub reference: Vec<f64>,
    /// Input applied at the previous step (for `Δu_0`).
    pub u_prev: f64,
    /// Added to every nonzero clearance radius so that solver round-off
    /// cannot place the vessel inside the enforced radius (km).
    pub clearance_guard_km: f64,
}

impl MpcSetup {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::domain("horizon must be at least 1"));
        }
        if !(self.q >= 0.0 && self.p >= 0.0) {
            return Err(Error::domain("state weights must be non-negative"));
        }
        if !(self.r > 0.0) {
            return Err(Error::domain("input-rate weight must be positive"));
        }
        if !(self.clearance_guard_km >= 0.0) {
            return Err(Error::domain("clearance guard must be non-negative"));
        }
        if self.reference.len() != self.horizon + 1 {
            return Err(Error::domain(format!(
                "reference window has {} points, expected {}",
                self.reference.len(),
                self.horizon + 1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Side {
    Below,
    Above,
    Free,
}

/// One (obstacle, step) clearance requirement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClearancePair {
    pub island: usize,
    /// Horizon step, `1..=K`.
    pub k: usize,
    pub center_km: f64,
    pub radius_km: f64,
    /// The risk constraint cannot be met at any distance; `radius_km` is
    /// then the floor radius and the pair is enforced softly.
    pub infeasible: bool,
}

impl ClearancePair {
    pub fn is_free(&self) -> bool {
        self.radius_km <= 0.0
    }

    pub fn clearance(&self, y: f64) -> f64 {
        (y - self.center_km).abs() - self.radius_km
    }
}

/// Per-pair sides, aligned with a slice of [`ClearancePair`]s.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideAssignment(pub Vec<Side>);

impl SideAssignment {
    pub fn free(n: usize) -> Self {
        Self(vec![Side::Free; n])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolveStatus {
    Optimal,
    Softened,
    InfeasibleHard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    /// Slack per pair (zero for FREE pairs or hard solves).
    pub slacks: Vec<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// How observation sets are turned into clearance radii.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RadiusRule {
    /// Wasserstein DR CVaR constraint (`θ = 0` is the SAA rule).
    Robust(RiskParams),
    /// `μ̂ + Φ⁻¹(α) σ̂` with the sample standard deviation.
    GaussianQuantile { alpha: f64 },
}

/// Gaussian-approximation chance-constraint radius; the single sample when
/// `N = 1`.
pub fn chance_radius(obs: &[f64], alpha: f64) -> Result<f64> {
    if obs.is_empty() {
        return Err(Error::domain("empty observation set"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n = obs.len() as f64;
    let mean = obs.iter().sum::<f64>() / n;
    if obs.len() == 1 {
        return Ok(mean);
    }
    let var = obs.iter().map(|o| (o - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let z = Normal::standard().inverse_cdf(alpha);
    Ok(mean + z * var.sqrt())
}

impl RadiusRule {
    fn radius(&self, obs: &[f64]) -> Result<(f64, bool)> {
        match self {
            RadiusRule::Robust(risk) => {
                let dist = EmpiricalDistribution::new(obs.to_vec())?;
                Ok(match safe_radius(&dist, risk) {
                    SafeRadius::Radius(r) => (r, false),
                    SafeRadius::Infeasible { floor_radius } => (floor_radius, true),
                })
            }
            RadiusRule::GaussianQuantile { alpha } => Ok((chance_radius(obs, *alpha)?, false)),
        }
    }
}

/// Clearance radii for every island and horizon step `k = 1..=K` of the
/// window starting at grid step `start`.
pub fn compile_constraints(
    obstacles: &[ObstacleTimeline],
    start: usize,
    horizon: usize,
    rule: &RadiusRule,
) -> Result<Vec<ClearancePair>> {
    if let RadiusRule::Robust(risk) = rule {
        risk.validate()?;
    }
    let mut pairs = Vec::with_capacity(obstacles.len() * horizon);
    for tl in obstacles {
        for k in 1..=horizon {
            let (radius, infeasible) = rule.radius(tl.observations(start + k)?)?;
            pairs.push(ClearancePair {
                island: tl.id,
                k,
                center_km: tl.center_km,
                radius_km: radius,
                infeasible: infeasible && radius > 0.0,
            });
        }
    }
    Ok(pairs)
}

/// [`compile_constraints`] with the robust rule.
pub fn compile_risk_constraints(
    obstacles: &[ObstacleTimeline],
    start: usize,
    horizon: usize,
    risk: &RiskParams,
) -> Result<Vec<ClearancePair>> {
    compile_constraints(obstacles, start, horizon, &RadiusRule::Robust(*risk))
}

/// Reachable output intervals `k = 0..=K` from `x0`, optionally intersected
/// with side constraints. `None` when some interval is empty.
fn reachable(
    vessel: &VesselModel,
    x0: f64,
    horizon: usize,
    pairs: &[ClearancePair],
    sides: Option<&[Side]>,
) -> Option<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(horizon + 1);
    let (mut lo, mut hi) = (x0, x0);
    out.push((lo, hi));
    for k in 1..=horizon {
        lo = (lo + vessel.ts_h * vessel.u_min).max(vessel.x_min);
        hi = (hi + vessel.ts_h * vessel.u_max).min(vessel.x_max);
        if let Some(sides) = sides {
            for (pair, side) in pairs.iter().zip(sides) {
                if pair.k != k {
                    continue;
                }
                match side {
                    Side::Below => hi = hi.min(pair.center_km - pair.radius_km),
                    Side::Above => lo = lo.max(pair.center_km + pair.radius_km),
                    Side::Free => {}
                }
            }
        }
        if lo > hi {
            return None;
        }
        out.push((lo, hi));
    }
    Some(out)
}

/// Indices of pairs that can bind: nonzero radius and a reachable output
/// interval that meets the open obstacle interval.
pub fn active_pairs(vessel: &VesselModel, x0: f64, horizon: usize, pairs: &[ClearancePair]) -> Vec<usize> {
    let Some(reach) = reachable(vessel, x0, horizon, pairs, None) else {
        return Vec::new();
    };
    pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            if p.is_free() || p.k == 0 || p.k > horizon {
                return false;
            }
            let (lo, hi) = reach[p.k];
            lo < p.center_km + p.radius_km && hi > p.center_km - p.radius_km
        })
        .map(|(i, _)| i)
        .collect()
}

fn stacked_outputs(x0: f64, u: &[f64], ts: f64) -> Vec<f64> {
    let mut y = Vec::with_capacity(u.len() + 1);
    y.push(x0);
    for &ui in u {
        let last = *y.last().unwrap();
        y.push(last + ts * ui);
    }
    y
}

/// Tracking cost of an input sequence (without slack penalty).
pub fn tracking_cost(setup: &MpcSetup, x0: f64, u: &[f64], ts: f64) -> f64 {
    let y = stacked_outputs(x0, u, ts);
    let k = setup.horizon;
    let mut cost = setup.p * (y[k] - setup.reference[k]).powi(2);
    for (yi, ri) in y[..k].iter().zip(&setup.reference) {
        cost += setup.q * (yi - ri).powi(2);
    }
    let mut prev = setup.u_prev;
    for &ui in u {
        cost += setup.r * (ui - prev).powi(2);
        prev = ui;
    }
    cost
}

/// Solves the convex QP for fixed sides. Pairs marked [`Side::Free`] are
/// ignored; with `soften` every sided pair gets a slack penalized by
/// `rho_slack`.
pub fn solve_qp(
    vessel: &VesselModel,
    setup: &MpcSetup,
    x0: f64,
    pairs: &[ClearancePair],
    sides: &SideAssignment,
    soften: bool,
) -> Result<MpcSolution> {
    vessel.validate()?;
    setup.validate()?;
    if sides.0.len() != pairs.len() {
        return Err(Error::domain("side assignment does not match the pair list"));
    }
    let kh = setup.horizon;
    let ts = vessel.ts_h;
    let sided: Vec<usize> = (0..pairs.len())
        .filter(|&i| sides.0[i] != Side::Free && pairs[i].k >= 1 && pairs[i].k <= kh)
        .collect();

    let hard_ok = reachable(vessel, x0, kh, pairs, Some(&sides.0)).is_some();
    let box_ok = reachable(vessel, x0, kh, pairs, None).is_some();
    if !box_ok {
        return Err(Error::numerical("state and input bounds admit no trajectory", f64::NAN));
    }
    if !soften && !hard_ok {
        let u = vec![setup.u_prev.clamp(vessel.u_min, vessel.u_max); kh];
        let y = stacked_outputs(x0, &u, ts);
        return Ok(MpcSolution {
            u,
            x: y.clone(),
            y,
            objective: f64::INFINITY,
            status: SolveStatus::InfeasibleHard,
            slacks: vec![0.0; pairs.len()],
            iterations: 0,
            kkt_residual: 0.0,
        });
    }

    let n_slack = if soften { sided.len() } else { 0 };
    let n = kh + n_slack;
    let mut h = DMatrix::zeros(n, n);
    let mut c = DVector::zeros(n);
    let mut constant = 0.0;
    let mut add_square = |row: &[(usize, f64)], target: f64, w: f64| {
        if w == 0.0 {
            return;
        }
        for &(i, a) in row {
            c[i] -= 2.0 * w * target * a;
            for &(j, b) in row {
                h[(i, j)] += 2.0 * w * a * b;
            }
        }
        constant += w * target * target;
    };
    // y_k = x0 + ts * sum_{j<k} u_j
    let output_row = |k: usize| -> Vec<(usize, f64)> { (0..k).map(|j| (j, ts)).collect() };
    add_square(&[], setup.reference[0] - x0, setup.q);
    for k in 1..kh {
        add_square(&output_row(k), setup.reference[k] - x0, setup.q);
    }
    add_square(&output_row(kh), setup.reference[kh] - x0, setup.p);
    add_square(&[(0, 1.0)], setup.u_prev, setup.r);
    for k in 1..kh {
        add_square(&[(k, 1.0), (k - 1, -1.0)], 0.0, setup.r);
    }
    for (s, _) in sided.iter().enumerate().take(n_slack) {
        c[kh + s] += setup.rho_slack;
    }

    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for j in 0..kh {
        rows.push((vec![(j, 1.0)], vessel.u_max));
        rows.push((vec![(j, -1.0)], -vessel.u_min));
    }
    for k in 1..=kh {
        rows.push((output_row(k), vessel.x_max - x0));
        rows.push((output_row(k).into_iter().map(|(j, a)| (j, -a)).collect(), x0 - vessel.x_min));
    }
    for (s, &i) in sided.iter().enumerate() {
        let p = &pairs[i];
        let mut row = output_row(p.k);
        let rhs = match sides.0[i] {
            Side::Below => p.center_km - p.radius_km - x0,
            Side::Above => {
                row.iter_mut().for_each(|e| e.1 = -e.1);
                x0 - p.center_km - p.radius_km
            }
            Side::Free => unreachable!(),
        };
        if soften {
            row.push((kh + s, -1.0));
            rows.push((vec![(kh + s, -1.0)], 0.0));
        }
        rows.push((row, rhs));
    }
    let mut g = DMatrix::zeros(rows.len(), n);
    let mut b = DVector::zeros(rows.len());
    for (r, (row, rhs)) in rows.iter().enumerate() {
        for &(j, a) in row {
            g[(r, j)] += a;
        }
        b[r] = *rhs;
    }

    let qp = QpProblem::new(h, c, g, b)?;
    let sol = qp.solve()?;
    let u: Vec<f64> = sol.x.iter().take(kh).copied().collect();
    let mut slacks = vec![0.0; pairs.len()];
    for (s, &i) in sided.iter().enumerate().take(n_slack) {
        slacks[i] = sol.x[kh + s].max(0.0);
    }
    let y = stacked_outputs(x0, &u, ts);
    let status = if slacks.iter().any(|&s| s > SLACK_TOL) {
        SolveStatus::Softened
    } else {
        SolveStatus::Optimal
    };
    Ok(MpcSolution {
        u,
        x: y.clone(),
        y,
        objective: sol.objective + constant,
        status,
        slacks,
        iterations: sol.iterations,
        kkt_residual: sol.kkt_residual,
    })
}

/// Counters reported per controller step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub nodes_explored: usize,
    pub qp_solves: usize,
    pub qp_iterations: usize,
    pub active_pairs: usize,
    pub softened_search: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub u0: f64,
    pub solution: MpcSolution,
    pub pairs: Vec<ClearancePair>,
    pub sides: SideAssignment,
    pub stats: SearchStats,
}

struct Node {
    bound: f64,
    seq: usize,
    sides: Vec<Side>,
    solution: MpcSolution,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // min-heap on (bound, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

fn side_of(y: f64, center: f64) -> Side {
    if y < center {
        Side::Below
    } else {
        Side::Above
    }
}

/// Best-first branch-and-bound over the sides of the active pairs.
/// Returns `None` when no hard-feasible assignment exists (`soften = false`).
fn branch_and_bound(
    vessel: &VesselModel,
    setup: &MpcSetup,
    x0: f64,
    pairs: &[ClearancePair],
    active: &[usize],
    soften: bool,
    stats: &mut SearchStats,
) -> Result<Option<(MpcSolution, Vec<Side>)>> {
    let solve = |sides: &[Side], stats: &mut SearchStats| -> Result<Option<MpcSolution>> {
        if !soften && reachable(vessel, x0, setup.horizon, pairs, Some(sides)).is_none() {
            return Ok(None);
        }
        let sol = solve_qp(vessel, setup, x0, pairs, &SideAssignment(sides.to_vec()), soften)?;
        stats.qp_solves += 1;
        stats.qp_iterations += sol.iterations;
        Ok((sol.status != SolveStatus::InfeasibleHard).then_some(sol))
    };
    let violated = |sol: &MpcSolution, sides: &[Side]| -> Option<usize> {
        active
            .iter()
            .copied()
            .find(|&i| sides[i] == Side::Free && pairs[i].clearance(sol.y[pairs[i].k]) < -SIDE_TOL)
    };
    let complete = |sol: &MpcSolution, sides: &[Side]| -> Vec<Side> {
        let mut out = sides.to_vec();
        for &i in active {
            if out[i] == Side::Free {
                out[i] = side_of(sol.y[pairs[i].k], pairs[i].center_km);
            }
        }
        out
    };

    let mut incumbent: Option<(MpcSolution, Vec<Side>)> = None;
    // reference-implied pattern as the initial incumbent
    let mut guess = vec![Side::Free; pairs.len()];
    for &i in active {
        guess[i] = side_of(setup.reference[pairs[i].k], pairs[i].center_km);
    }
    if let Some(sol) = solve(&guess, stats)? {
        incumbent = Some((sol, guess));
    }

    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    let root = vec![Side::Free; pairs.len()];
    if let Some(sol) = solve(&root, stats)? {
        heap.push(Node {
            bound: sol.objective,
            seq,
            sides: root,
            solution: sol,
        });
    }
    while let Some(node) = heap.pop() {
        stats.nodes_explored += 1;
        if stats.nodes_explored > MAX_NODES {
            return Err(Error::numerical("branch-and-bound node limit reached", node.bound));
        }
        if let Some((inc, _)) = &incumbent {
            if node.bound >= inc.objective - 1e-9 * (1.0 + inc.objective.abs()) {
                continue;
            }
        }
        match violated(&node.solution, &node.sides) {
            None => {
                let sides = complete(&node.solution, &node.sides);
                incumbent = Some((node.solution, sides));
            }
            Some(i) => {
                for side in [Side::Below, Side::Above] {
                    let mut child = node.sides.clone();
                    child[i] = side;
                    if let Some(sol) = solve(&child, stats)? {
                        let better = incumbent
                            .as_ref()
                            .is_none_or(|(inc, _)| sol.objective < inc.objective);
                        if better {
                            seq += 1;
                            heap.push(Node {
                                bound: sol.objective,
                                seq,
                                sides: child,
                                solution: sol,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(incumbent)
}

/// Generic controller step: compile radii, prune unreachable pairs, search
/// sides (hard first, softened when the risk constraint is unattainable or
/// no hard assignment exists) and return the first input.
pub fn mpc_step(
    x: f64,
    vessel: &VesselModel,
    setup: &MpcSetup,
    obstacles: &[ObstacleTimeline],
    start: usize,
    rule: &RadiusRule,
) -> Result<StepOutcome> {
    vessel.validate()?;
    setup.validate()?;
    if !(x >= vessel.x_min - 1e-9 && x <= vessel.x_max + 1e-9) {
        return Err(Error::domain(format!("state {x} outside the state bounds")));
    }
    let mut pairs = compile_constraints(obstacles, start, setup.horizon, rule)?;
    for p in pairs.iter_mut().filter(|p| !p.is_free()) {
        p.radius_km += setup.clearance_guard_km;
    }
    solve_with_pairs(x, vessel, setup, pairs)
}

/// Side search for an already compiled pair list.
pub fn solve_with_pairs(
    x: f64,
    vessel: &VesselModel,
    setup: &MpcSetup,
    pairs: Vec<ClearancePair>,
) -> Result<StepOutcome> {
    let active = active_pairs(vessel, x, setup.horizon, &pairs);
    let mut stats = SearchStats {
        active_pairs: active.len(),
        ..Default::default()
    };
    let needs_soft = active.iter().any(|&i| pairs[i].infeasible);
    let mut found = None;
    if !needs_soft {
        found = branch_and_bound(vessel, setup, x, &pairs, &active, false, &mut stats)?;
    }
    if found.is_none() {
        stats.softened_search = true;
        found = branch_and_bound(vessel, setup, x, &pairs, &active, true, &mut stats)?;
    }
    let (solution, sides) =
        found.ok_or_else(|| Error::numerical("no solution even with softened constraints", f64::NAN))?;
    Ok(StepOutcome {
        u0: solution.u[0],
        solution,
        pairs,
        sides: SideAssignment(sides),
        stats,
    })
}

/// Minimum objective over every side assignment of the active pairs.
/// Exponential; a test oracle for the branch-and-bound.
pub fn exhaustive_objective(
    x: f64,
    vessel: &VesselModel,
    setup: &MpcSetup,
    pairs: &[ClearancePair],
    soften: bool,
) -> Result<Option<f64>> {
    let active = active_pairs(vessel, x, setup.horizon, pairs);
    if active.len() > 20 {
        return Err(Error::domain("too many active pairs to enumerate"));
    }
    let mut best: Option<f64> = None;
    for mask in 0u32..(1u32 << active.len()) {
        let mut sides = vec![Side::Free; pairs.len()];
        for (bit, &i) in active.iter().enumerate() {
            sides[i] = if mask & (1 << bit) == 0 { Side::Below } else { Side::Above };
        }
        let sol = solve_qp(vessel, setup, x, pairs, &SideAssignment(sides), soften)?;
        if sol.status != SolveStatus::InfeasibleHard {
            best = Some(best.map_or(sol.objective, |b: f64| b.min(sol.objective)));
        }
    }
    Ok(best)
}

/// Wasserstein DR-MPC step.
pub fn dr_mpc_step(
    x: f64,
    vessel: &VesselModel,
    setup: &MpcSetup,
    obstacles: &[ObstacleTimeline],
    start: usize,
    risk: &RiskParams,
) -> Result<StepOutcome> {
    mpc_step(x, vessel, setup, obstacles, start, &RadiusRule::Robust(*risk))
}

/// SAA-MPC step: the DR pipeline with `θ = 0`.
pub fn saa_mpc_step(
    x: f64,
    vessel: &VesselModel,
    setup: &MpcSetup,
    obstacles: &[ObstacleTimeline],
    start: usize,
    risk: &RiskParams,
) -> Result<StepOutcome> {
    dr_mpc_step(x, vessel, setup, obstacles, start, &risk.with_theta(0.0))
}

/// Gaussian-quantile chance-constrained MPC step.
pub fn cc_mpc_step(
    x: f64,
    vessel: &VesselModel,
    setup: &MpcSetup,
    obstacles: &[ObstacleTimeline],
    start: usize,
    alpha: f64,
) -> Result<StepOutcome> {
    mpc_step(x, vessel, setup, obstacles, start, &RadiusRule::GaussianQuantile { alpha })
}

/// Which controller drives the vessel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Controller {
    Dr(RiskParams),
    Saa(RiskParams),
    Cc { alpha: f64 },
    /// Pure tracking, obstacles ignored.
    Free,
}

impl Controller {
    pub fn name(&self) -> &'static str {
        match self {
            Controller::Dr(_) => "DR-MPC",
            Controller::Saa(_) => "SAA-MPC",
            Controller::Cc { .. } => "CC-MPC",
            Controller::Free => "FREE",
        }
    }

    pub fn theta(&self) -> Option<f64> {
        match self {
            Controller::Dr(r) => Some(r.theta),
            Controller::Saa(_) => Some(0.0),
            _ => None,
        }
    }

    pub fn step(
        &self,
        x: f64,
        vessel: &VesselModel,
        setup: &MpcSetup,
        obstacles: &[ObstacleTimeline],
        start: usize,
    ) -> Result<StepOutcome> {
        match self {
            Controller::Dr(risk) => dr_mpc_step(x, vessel, setup, obstacles, start, risk),
            Controller::Saa(risk) => saa_mpc_step(x, vessel, setup, obstacles, start, risk),
            Controller::Cc { alpha } => cc_mpc_step(x, vessel, setup, obstacles, start, *alpha),
            Controller::Free => mpc_step(x, vessel, setup, &[], start, &RadiusRule::GaussianQuantile { alpha: 0.5 }),
        }
    }
}

/// Piecewise-linear reference through `(t_h, p_km)` waypoints, held at its
/// end values outside the waypoint range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub waypoints: Vec<(f64, f64)>,
}

impl Reference {
    pub fn new(waypoints: Vec<(f64, f64)>) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::domain("reference needs at least one waypoint"));
        }
        if waypoints.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::domain("reference waypoint times must be strictly increasing"));
        }
        Ok(Self { waypoints })
    }

    pub fn constant_speed(p0: f64, speed: f64, duration_h: f64) -> Self {
        Self {
            waypoints: vec![(0.0, p0), (duration_h, p0 + speed * duration_h)],
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        let w = &self.waypoints;
        if t <= w[0].0 {
            return w[0].1;
        }
        let last = w[w.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        let i = w.partition_point(|p| p.0 <= t);
        let (a, b) = (w[i - 1], w[i]);
        a.1 + (t - a.0) / (b.0 - a.0) * (b.1 - a.1)
    }
}

/// Horizon length and weights shared by every window of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcWeights {
    pub horizon: usize,
    pub q: f64,
    pub p: f64,
    pub r: f64,
    pub rho_slack: f64,
    pub clearance_guard_km: f64,
}

impl MpcWeights {
    pub fn window(&self, reference: &Reference, ts: f64, step: usize, u_prev: f64) -> MpcSetup {
        MpcSetup {
            horizon: self.horizon,
            q: self.q,
            p: self.p,
            r: self.r,
            rho_slack: self.rho_slack,
            reference: (0..=self.horizon)
                .map(|k| reference.at((step + k) as f64 * ts))
                .collect(),
            u_prev,
            clearance_guard_km: self.clearance_guard_km,
        }
    }
}

/// One audit record per controller solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepAudit {
    pub step: usize,
    pub t_h: f64,
    pub state: f64,
    pub u: f64,
    pub status: SolveStatus,
    pub objective: f64,
    pub kkt_residual: f64,
    pub qp_iterations: usize,
    pub qp_solves: usize,
    pub nodes_explored: usize,
    pub active_pairs: usize,
    pub max_slack: f64,
}

/// Closed-loop record of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunLog {
    /// Positions at steps `0..=T`.
    pub states: Vec<f64>,
    /// Applied inputs at steps `0..T`.
    pub inputs: Vec<f64>,
    /// Reference at steps `0..=T`.
    pub reference: Vec<f64>,
    pub audit: Vec<StepAudit>,
    /// Set when a controller error aborted the run.
    pub error: Option<String>,
}

/// Runs `steps` receding-horizon iterations from `x0`. Obstacle timelines
/// are indexed from the run's first step. A controller error stops the run
/// and is recorded in the returned (partial) log.
#[allow(clippy::too_many_arguments)]
pub fn receding_horizon_run(
    controller: &Controller,
    vessel: &VesselModel,
    weights: &MpcWeights,
    obstacles: &[ObstacleTimeline],
    reference: &Reference,
    x0: f64,
    u_init: f64,
    steps: usize,
) -> RunLog {
    let ts = vessel.ts_h;
    let mut log = RunLog {
        states: vec![x0],
        reference: vec![reference.at(0.0)],
        ..Default::default()
    };
    let mut x = x0;
    let mut u_prev = u_init;
    for t in 0..steps {
        let setup = weights.window(reference, ts, t, u_prev);
        match controller.step(x, vessel, &setup, obstacles, t) {
            Ok(out) => {
                let u = out.u0;
                log.audit.push(StepAudit {
                    step: t,
                    t_h: t as f64 * ts,
                    state: x,
                    u,
                    status: out.solution.status,
                    objective: out.solution.objective,
                    kkt_residual: out.solution.kkt_residual,
                    qp_iterations: out.stats.qp_iterations,
                    qp_solves: out.stats.qp_solves,
                    nodes_explored: out.stats.nodes_explored,
                    active_pairs: out.stats.active_pairs,
                    max_slack: out.solution.slacks.iter().copied().fold(0.0, f64::max),
                });
                x = vessel.step(x, u).clamp(vessel.x_min, vessel.x_max);
                u_prev = u;
                log.inputs.push(u);
                log.states.push(x);
                log.reference.push(reference.at((t + 1) as f64 * ts));
            }
            Err(e) => {
                log.error = Some(format!("step {t}: {e}"));
                break;
            }
        }
    }
    log
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vessel() -> VesselModel {
        VesselModel {
            ts_h: 0.1,
            u_min: 0.0,
            u_max: 25.0,
            x_min: 0.0,
            x_max: 100.0,
        }
    }

    fn setup(x0: f64, v: f64, k: usize) -> MpcSetup {
        MpcSetup {
            horizon: k,
            q: 1.0,
            p: 1.0,
            r: 0.1,
            rho_slack: 1e6,
            reference: (0..=k).map(|i| x0 + v * 0.1 * i as f64).collect(),
            u_prev: v,
            clearance_guard_km: 0.0,
        }
    }

    fn pair(k: usize, center: f64, radius: f64) -> ClearancePair {
        ClearancePair {
            island: 1,
            k,
            center_km: center,
            radius_km: radius,
            infeasible: false,
        }
    }

    #[test]
    fn unconstrained_tracking_has_zero_cost() {
        let s = setup(10.0, 20.0, 10);
        let sol = solve_qp(&vessel(), &s, 10.0, &[], &SideAssignment(vec![]), false).unwrap();
        assert!(sol.objective.abs() < 1e-9);
        assert!(sol.u.iter().all(|u| (u - 20.0).abs() < 1e-7));
        assert_eq!(sol.u.len(), 10);
        assert_eq!(sol.y.len(), 11);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn binding_below_constraint_is_exact() {
        // unconstrained y_3 = 16; require y_3 <= 14
        let s = setup(10.0, 20.0, 5);
        let pairs = [pair(3, 15.0, 1.0)];
        let sol = solve_qp(&vessel(), &s, 10.0, &pairs, &SideAssignment(vec![Side::Below]), false).unwrap();
        assert!((sol.y[3] - 14.0).abs() < 1e-7, "{}", sol.y[3]);
        assert_eq!(sol.status, SolveStatus::Optimal);
    }

    #[test]
    fn contradictory_sides_soften_to_least_violation() {
        // the same step must be below 14 and above 18: least total violation is 4
        let s = setup(10.0, 20.0, 5);
        let pairs = [pair(3, 15.0, 1.0), pair(3, 17.0, 1.0)];
        let sides = SideAssignment(vec![Side::Below, Side::Above]);
        let hard = solve_qp(&vessel(), &s, 10.0, &pairs, &sides, false).unwrap();
        assert_eq!(hard.status, SolveStatus::InfeasibleHard);
        let soft = solve_qp(&vessel(), &s, 10.0, &pairs, &sides, true).unwrap();
        assert_eq!(soft.status, SolveStatus::Softened);
        assert!((soft.slacks[0] + soft.slacks[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn branch_and_bound_picks_the_cheaper_side() {
        let v = vessel();
        let s = setup(10.0, 20.0, 6);
        let pairs: Vec<_> = (1..=6).map(|k| pair(k, 16.0, 1.5)).collect();
        let out = solve_with_pairs(10.0, &v, &s, pairs.clone()).unwrap();
        let exhaustive = exhaustive_objective(10.0, &v, &s, &pairs, false).unwrap().unwrap();
        assert!((out.solution.objective - exhaustive).abs() < 1e-6);
        for p in &pairs {
            assert!(p.clearance(out.solution.y[p.k]) >= -1e-6);
        }
    }

    #[test]
    fn chance_radius_examples() {
        assert_eq!(chance_radius(&[1.3], 0.95).unwrap(), 1.3);
        assert!((chance_radius(&[0.7, 0.7, 0.7], 0.9).unwrap() - 0.7).abs() < 1e-12);
        let r = chance_radius(&[1.0, 3.0], 0.95).unwrap();
        assert!((r - (2.0 + 1.6448536269514722 * 2f64.sqrt())).abs() < 1e-9);
    }

    #[test]
    fn reference_is_padded() {
        let r = Reference::new(vec![(0.0, 0.0), (2.0, 40.0)]).unwrap();
        assert_eq!(r.at(1.0), 20.0);
        assert_eq!(r.at(5.0), 40.0);
        assert_eq!(r.at(-1.0), 0.0);
    }

    #[test]
    fn zero_duration_run_is_empty() {
        let log = receding_horizon_run(
            &Controller::Free,
            &vessel(),
            &MpcWeights { horizon: 5, q: 1.0, p: 1.0, r: 0.1, rho_slack: 1e6, clearance_guard_km: 0.0 },
            &[],
            &Reference::constant_speed(0.0, 20.0, 5.0),
            0.0,
            20.0,
            0,
        );
        assert!(log.inputs.is_empty() && log.audit.is_empty());
        assert_eq!(log.states, vec![0.0]);
    }
}

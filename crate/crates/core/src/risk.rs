//! Safety loss, CVaR, type-1 Wasserstein distance and the distributionally
//! robust CVaR of obstacle penetration.
//!
//! An obstacle is the interval `{x : |x - c| ≤ ω}`, written as the two
//! half-spaces `A (x - c) ≤ ω` with `A = (+1, -1)`. The loss of safety at
//! position `y` is the distance from `y` to the complement of the interior.
//!
//! For a fixed CVaR threshold `z`, the worst-case expectation of
//! `max{ω - |c - y| - z, -z, 0}` over the order-1 Wasserstein ball of radius
//! `θ` around an empirical distribution equals the empirical expectation plus
//! `θ` (the integrand is 1-Lipschitz in `ω` with slope 1 in its upper tail and
//! the support is the whole real line). Two routes compute it: the finite dual
//! LP ([`inner_sup_lp`]) and the closed form ([`inner_sup_closed`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::LinearProgram;
use crate::tide_field::EmpiricalDistribution;

/// Interval obstacle as two unit half-spaces around a fixed center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceObstacle {
    pub center_km: f64,
}

impl HalfspaceObstacle {
    /// Rows of the half-space map; each has unit magnitude.
    pub const A: [f64; 2] = [1.0, -1.0];

    pub fn new(center_km: f64) -> Self {
        Self { center_km }
    }

    /// `A_j (c - y)` for both rows.
    pub fn halfspace_terms(&self, y: f64) -> [f64; 2] {
        let d = self.center_km - y;
        [Self::A[0] * d, Self::A[1] * d]
    }

    /// `min_j A_j (c - y)`, i.e. `-|c - y|`.
    pub fn signed_clearance(&self, y: f64) -> f64 {
        let [a, b] = self.halfspace_terms(y);
        a.min(b)
    }
}

/// Confidence level, tolerance and Wasserstein radius of one risk constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskParams {
    pub alpha: f64,
    pub delta: f64,
    pub theta: f64,
}

impl RiskParams {
    pub fn new(alpha: f64, delta: f64, theta: f64) -> Result<Self> {
        let p = Self { alpha, delta, theta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::domain(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::domain(format!("delta must be non-negative, got {}", self.delta)));
        }
        if !(self.theta >= 0.0) {
            return Err(Error::domain(format!("theta must be non-negative, got {}", self.theta)));
        }
        Ok(())
    }

    pub fn with_theta(self, theta: f64) -> Self {
        Self { theta, ..self }
    }

    /// Lowest attainable robust CVaR, `θ / (1 - α)`.
    pub fn value_floor(&self) -> f64 {
        self.theta / (1.0 - self.alpha)
    }
}

/// Optimal solution of the dual LP for fixed `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub z: f64,
    pub lambda: f64,
    pub s: Vec<f64>,
    pub rho: [f64; 2],
}

impl DualCertificate {
    pub fn is_vertex(&self) -> bool {
        self.rho == [1.0, 0.0] || self.rho == [0.0, 1.0]
    }
}

/// Loss of safety `[ω + min_j A_j (c - y)]⁺`.
pub fn safety_loss(y: f64, obstacle: &HalfspaceObstacle, omega: f64) -> f64 {
    (omega + obstacle.signed_clearance(y)).max(0.0)
}

/// Distance from `y` to the safe set `(-∞, c - ω] ∪ [c + ω, ∞)`, computed by
/// projecting onto the two boundary points.
pub fn safety_loss_oracle(y: f64, obstacle: &HalfspaceObstacle, omega: f64) -> f64 {
    let lower = obstacle.center_km - omega;
    let upper = obstacle.center_km + omega;
    if y <= lower || y >= upper {
        0.0
    } else {
        (y - lower).abs().min((upper - y).abs())
    }
}

fn cvar_objective(samples: &[f64], alpha: f64, z: f64) -> f64 {
    let tail: f64 = samples.iter().map(|&x| (x - z).max(0.0)).sum::<f64>() / samples.len() as f64;
    z + tail / (1.0 - alpha)
}

/// CVaR at level `α` of the uniform distribution over `samples`:
/// `min_z z + E[(X - z)⁺] / (1 - α)`, evaluated at every sample breakpoint.
pub fn cvar(samples: &[f64], alpha: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::domain("cvar of an empty sample"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(samples
        .iter()
        .map(|&z| cvar_objective(samples, alpha, z))
        .fold(f64::INFINITY, f64::min))
}

/// Order-1 Wasserstein distance between two empirical distributions.
///
/// Equal sizes use the sorted coupling; otherwise the exact integral of
/// `|F₁ - F₂|` over the merged support.
pub fn w1_distance(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> f64 {
    let mut xs = a.samples().to_vec();
    let mut ys = b.samples().to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    if xs.len() == ys.len() {
        return xs.iter().zip(&ys).map(|(x, y)| (x - y).abs()).sum::<f64>() / xs.len() as f64;
    }
    let mut points: Vec<f64> = xs.iter().chain(&ys).copied().collect();
    points.sort_by(f64::total_cmp);
    let cdf = |s: &[f64], t: f64| s.partition_point(|&v| v <= t) as f64 / s.len() as f64;
    points
        .windows(2)
        .map(|w| (cdf(&xs, w[0]) - cdf(&ys, w[0])).abs() * (w[1] - w[0]))
        .sum()
}

/// Order-1 Wasserstein distance as a transport LP over plans `κ` with
/// marginals `a` and `b`. Verification oracle for [`w1_distance`].
pub fn w1_distance_lp(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> Result<f64> {
    let (n, m) = (a.len(), b.len());
    let mut cost = Vec::with_capacity(n * m);
    for x in a.samples() {
        for y in b.samples() {
            cost.push((x - y).abs());
        }
    }
    let mut lp = LinearProgram::new(cost);
    for i in 0..n {
        let mut row = vec![0.0; n * m];
        row[i * m..(i + 1) * m].iter_mut().for_each(|v| *v = 1.0);
        lp = lp.eq(row, a.weight());
    }
    // the last column marginal is implied by the others
    for j in 0..m - 1 {
        let mut row = vec![0.0; n * m];
        (0..n).for_each(|i| row[i * m + j] = 1.0);
        lp = lp.eq(row, b.weight());
    }
    Ok(lp.solve()?.objective)
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta >= 0.0) {
        return Err(Error::domain(format!("theta must be non-negative, got {theta}")));
    }
    Ok(())
}

/// Robust inner supremum through its dual LP.
///
/// The LP in `(λ, s, ρ)` is linear in `ρ` over the 2-simplex, so its optimum
/// sits at a vertex; both vertices are solved in closed form and the better
/// kept. `λ` enters only through `λθ` with `λ ≥ 1`, so `λ = 1`.
pub fn inner_sup_lp(
    dist: &EmpiricalDistribution,
    y: f64,
    obstacle: &HalfspaceObstacle,
    z: f64,
    theta: f64,
) -> Result<(f64, DualCertificate)> {
    check_theta(theta)?;
    let n = dist.len() as f64;
    let terms = obstacle.halfspace_terms(y);
    let best = (0..2)
        .map(|j| {
            let s: Vec<f64> = dist
                .samples()
                .iter()
                .map(|&w| (w + terms[j] - z).max(-z).max(0.0))
                .collect();
            let value = theta + s.iter().sum::<f64>() / n;
            (j, value, s)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("two vertices");
    let (j, value, s) = best;
    let mut rho = [0.0; 2];
    rho[j] = 1.0;
    let cert = DualCertificate {
        z,
        lambda: 1.0,
        s,
        rho,
    };
    let residual = certificate_residual(dist, y, obstacle, &cert);
    if residual > 1e-9 {
        return Err(Error::numerical("dual certificate violates its constraints", residual));
    }
    Ok((value, cert))
}

/// Largest constraint violation of a certificate.
pub fn certificate_residual(
    dist: &EmpiricalDistribution,
    y: f64,
    obstacle: &HalfspaceObstacle,
    cert: &DualCertificate,
) -> f64 {
    let terms = obstacle.halfspace_terms(y);
    let rho_a = cert.rho[0] * terms[0] + cert.rho[1] * terms[1];
    let mut worst = (cert.rho[0] + cert.rho[1] - 1.0).abs();
    worst = worst.max((1.0 - cert.lambda).max(0.0));
    worst = worst.max((-cert.rho[0]).max(-cert.rho[1]).max(0.0));
    for (&w, &s) in dist.samples().iter().zip(&cert.s) {
        worst = worst
            .max(w + rho_a - s - cert.z)
            .max(-(s + cert.z))
            .max(-s);
    }
    worst.max(0.0)
}

/// The dual LP solved as a general LP (`ρ` continuous on the simplex) by the
/// simplex method. Verification route for [`inner_sup_lp`].
pub fn inner_sup_full_lp(
    dist: &EmpiricalDistribution,
    y: f64,
    obstacle: &HalfspaceObstacle,
    z: f64,
    theta: f64,
) -> Result<(f64, DualCertificate)> {
    check_theta(theta)?;
    let n = dist.len();
    let terms = obstacle.halfspace_terms(y);
    // variables: [λ - 1, s_1..s_N, ρ_1, ρ_2], all non-negative
    let nv = n + 3;
    let mut cost = vec![0.0; nv];
    cost[0] = theta;
    cost[1..=n].iter_mut().for_each(|c| *c = 1.0 / n as f64);
    let mut lp = LinearProgram::new(cost);
    for (i, &w) in dist.samples().iter().enumerate() {
        let mut row = vec![0.0; nv];
        row[1 + i] = -1.0;
        row[n + 1] = terms[0];
        row[n + 2] = terms[1];
        lp = lp.ub(row, z - w);
        let mut row = vec![0.0; nv];
        row[1 + i] = -1.0;
        lp = lp.ub(row, z);
    }
    let mut simplex = vec![0.0; nv];
    simplex[n + 1] = 1.0;
    simplex[n + 2] = 1.0;
    lp = lp.eq(simplex, 1.0);
    let sol = lp.solve()?;
    let cert = DualCertificate {
        z,
        lambda: 1.0 + sol.x[0],
        s: sol.x[1..=n].to_vec(),
        rho: [sol.x[n + 1], sol.x[n + 2]],
    };
    Ok((sol.objective + theta, cert))
}

/// Robust inner supremum in closed form: `θ + mean_i max{ω̂ᵢ - |c - y| - z, -z, 0}`.
pub fn inner_sup_closed(
    dist: &EmpiricalDistribution,
    y: f64,
    obstacle: &HalfspaceObstacle,
    z: f64,
    theta: f64,
) -> f64 {
    let clearance = obstacle.signed_clearance(y);
    let mean = dist
        .samples()
        .iter()
        .map(|&w| (w + clearance - z).max(-z).max(0.0))
        .sum::<f64>()
        / dist.len() as f64;
    theta + mean
}

/// Objective of the CVaR epigraph form before minimizing over `z`.
pub fn dr_cvar_objective(
    dist: &EmpiricalDistribution,
    y: f64,
    obstacle: &HalfspaceObstacle,
    alpha: f64,
    theta: f64,
    z: f64,
) -> f64 {
    z + inner_sup_closed(dist, y, obstacle, z, theta) / (1.0 - alpha)
}

/// Worst-case CVaR of the safety loss over the Wasserstein ball.
///
/// The objective in `z` is convex piecewise-linear with kinks at `0` and at
/// `ω̂ᵢ - |c - y|`, so the minimum is taken over those breakpoints.
pub fn dr_cvar(
    dist: &EmpiricalDistribution,
    y: f64,
    obstacle: &HalfspaceObstacle,
    alpha: f64,
    theta: f64,
) -> f64 {
    let clearance = obstacle.signed_clearance(y);
    std::iter::once(0.0)
        .chain(dist.samples().iter().map(|&w| w + clearance))
        .map(|z| dr_cvar_objective(dist, y, obstacle, alpha, theta, z))
        .fold(f64::INFINITY, f64::min)
}

/// Outcome of scalarizing the robust risk constraint into a clearance radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SafeRadius {
    /// Least center distance satisfying the constraint.
    Radius(f64),
    /// No distance satisfies it (`θ / (1 - α) > δ`). `floor_radius` is the
    /// least distance at which the robust CVaR reaches its floor.
    Infeasible { floor_radius: f64 },
}

impl SafeRadius {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, SafeRadius::Infeasible { .. })
    }

    /// Clearance the controller should enforce (softly when infeasible).
    pub fn radius(&self) -> f64 {
        match *self {
            SafeRadius::Radius(r) => r,
            SafeRadius::Infeasible { floor_radius } => floor_radius,
        }
    }
}

/// CVaR of the empirical safety losses `(ω̂ᵢ - d)⁺` at center distance `d`.
fn loss_cvar_at(dist: &EmpiricalDistribution, alpha: f64, d: f64) -> f64 {
    let losses: Vec<f64> = dist.samples().iter().map(|&w| (w - d).max(0.0)).collect();
    cvar(&losses, alpha).expect("non-empty distribution")
}

/// Least `d ≥ 0` with `CVaR((ω̂ - d)⁺) ≤ budget`. The map is continuous,
/// nonincreasing and linear between consecutive sample values, so it is
/// inverted exactly on the bracketing segment.
fn invert_loss_cvar(dist: &EmpiricalDistribution, alpha: f64, budget: f64) -> f64 {
    let mut knots: Vec<f64> = std::iter::once(0.0)
        .chain(dist.samples().iter().copied().filter(|&w| w > 0.0))
        .collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut prev: Option<(f64, f64)> = None;
    for &d in &knots {
        let g = loss_cvar_at(dist, alpha, d);
        if g <= budget {
            return match prev {
                None => d,
                Some((d0, g0)) => {
                    let r = d0 + (g0 - budget) * (d - d0) / (g0 - g);
                    r.clamp(d0, d)
                }
            };
        }
        prev = Some((d, g));
    }
    // unreachable for budget >= 0: the loss CVaR vanishes at the largest sample
    knots.last().copied().unwrap_or(0.0)
}

/// Least center distance at which the robust CVaR constraint holds.
pub fn safe_radius(dist: &EmpiricalDistribution, risk: &RiskParams) -> SafeRadius {
    let budget = risk.delta - risk.value_floor();
    if budget < 0.0 {
        SafeRadius::Infeasible {
            floor_radius: invert_loss_cvar(dist, risk.alpha, 0.0),
        }
    } else {
        SafeRadius::Radius(invert_loss_cvar(dist, risk.alpha, budget))
    }
}

/// Bisection fallback for [`safe_radius`] on the monotone map
/// `d ↦ dr_cvar(d)`, to `tol` km.
pub fn safe_radius_bisection(dist: &EmpiricalDistribution, risk: &RiskParams, tol: f64) -> SafeRadius {
    let obstacle = HalfspaceObstacle::new(0.0);
    let value = |d: f64| dr_cvar(dist, d, &obstacle, risk.alpha, risk.theta);
    let target = if risk.value_floor() > risk.delta {
        risk.value_floor()
    } else {
        risk.delta
    };
    let (mut lo, mut hi) = (0.0, dist.max().max(0.0));
    if value(lo) <= target + 1e-15 {
        hi = 0.0;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if value(mid) <= target + 1e-15 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if risk.value_floor() > risk.delta {
        SafeRadius::Infeasible { floor_radius: hi }
    } else {
        SafeRadius::Radius(hi)
    }
}

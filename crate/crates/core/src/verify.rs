//! Self-check suite behind the `verify` subcommand.
//!
//! Every check compares two independent routes to the same quantity or
//! tests a structural property on seeded random instances. Sizes are kept
//! small enough that the whole suite runs in seconds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Method, ScenarioConfig};
use crate::error::Result;
use crate::mpc::{
    exhaustive_objective, solve_with_pairs, ClearancePair, MpcSetup, VesselModel,
};
use crate::report::write_results_csv;
use crate::risk::{
    dr_cvar, inner_sup_closed, inner_sup_full_lp, inner_sup_lp, safe_radius, safe_radius_bisection,
    safety_loss, safety_loss_oracle, w1_distance, w1_distance_lp, HalfspaceObstacle, RiskParams, SafeRadius,
};
use crate::sim::{closed_loop_cost, simulate, sweep_theta, PreparedScenario};
use crate::tide_field::{EmpiricalDistribution, Shoal};

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn from(name: &'static str, r: Result<String>) -> Self {
        match r {
            Ok(detail) => Check { name, passed: true, detail },
            Err(e) => Check { name, passed: false, detail: e.to_string() },
        }
    }
}

fn fail(msg: String) -> crate::Error {
    crate::Error::Domain(msg)
}

fn samples(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> EmpiricalDistribution {
    EmpiricalDistribution::new((0..n).map(|_| rng.random_range(0.0..scale)).collect()).expect("nonempty")
}

/// Loss of safety against the projection onto the safe set.
pub fn check_safety_loss(count: usize, seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let c = rng.random_range(-50.0..50.0);
        let y = c + rng.random_range(-10.0..10.0);
        let w = rng.random_range(0.0..8.0);
        let obs = HalfspaceObstacle::new(c);
        worst = worst.max((safety_loss(y, &obs, w) - safety_loss_oracle(y, &obs, w)).abs());
    }
    if worst > 1e-12 {
        return Err(fail(format!("max deviation {worst:e}")));
    }
    Ok(format!("{count} triples, max deviation {worst:e}"))
}

/// Dual LP in closed-vertex form, as a general simplex LP, and the closed
/// form all agree; the certificate is a simplex vertex with `λ = 1`.
pub fn check_duality(count: usize, seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let n = rng.random_range(1..=15);
        let dist = samples(&mut rng, n, 3.0);
        let c = rng.random_range(0.0..10.0);
        let mut y = rng.random_range(0.0..10.0);
        if y == c {
            y += 0.5;
        }
        let z = rng.random_range(-1.0..2.0);
        let theta = rng.random_range(0.0..0.01);
        let obs = HalfspaceObstacle::new(c);
        let (v_lp, cert) = inner_sup_lp(&dist, y, &obs, z, theta)?;
        let (v_full, _) = inner_sup_full_lp(&dist, y, &obs, z, theta)?;
        let v_closed = inner_sup_closed(&dist, y, &obs, z, theta);
        worst = worst.max((v_lp - v_closed).abs()).max((v_full - v_closed).abs());
        if cert.lambda != 1.0 || !cert.is_vertex() {
            return Err(fail(format!("certificate not at a vertex with unit lambda: {cert:?}")));
        }
    }
    if worst > 1e-6 {
        return Err(fail(format!("max deviation {worst:e}")));
    }
    Ok(format!("{count} instances, max deviation {worst:e}"))
}

/// The robust CVaR never drops below `θ / (1 - α)` and reaches it when every
/// loss is zero.
pub fn check_value_floor(count: usize, seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        let n = rng.random_range(1..=12);
        let dist = samples(&mut rng, n, 3.0);
        let alpha = rng.random_range(0.5..0.99);
        let theta = rng.random_range(0.0..0.01);
        let floor = theta / (1.0 - alpha);
        let c = rng.random_range(0.0..10.0);
        let obs = HalfspaceObstacle::new(c);
        let y = rng.random_range(-5.0..15.0);
        let v = dr_cvar(&dist, y, &obs, alpha, theta);
        if v < floor - 1e-9 {
            return Err(fail(format!("value {v} below floor {floor}")));
        }
        let far = c + dist.max() + 1.0;
        let v_far = dr_cvar(&dist, far, &obs, alpha, theta);
        if (v_far - floor).abs() > 1e-9 {
            return Err(fail(format!("zero-loss value {v_far} differs from floor {floor}")));
        }
    }
    Ok(format!("{count} instances"))
}

/// Closed-form safe radius against bisection on the robust CVaR, plus the
/// single-atom formula.
pub fn check_safe_radius(count: usize, seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let n = rng.random_range(1..=15);
        let dist = samples(&mut rng, n, 3.0);
        let alpha = rng.random_range(0.5..0.99);
        let delta = rng.random_range(0.0..0.5);
        let theta = rng.random_range(0.0..0.01);
        let risk = RiskParams::new(alpha, delta, theta)?;
        match (safe_radius(&dist, &risk), safe_radius_bisection(&dist, &risk, 1e-10)) {
            (SafeRadius::Radius(a), SafeRadius::Radius(b)) => worst = worst.max((a - b).abs()),
            (SafeRadius::Infeasible { .. }, SafeRadius::Infeasible { .. }) => {}
            (a, b) => return Err(fail(format!("routes disagree: {a:?} vs {b:?}"))),
        }
        let w0 = dist.samples()[0];
        let atom = EmpiricalDistribution::new(vec![w0])?;
        let floor = risk.value_floor();
        match safe_radius(&atom, &risk) {
            SafeRadius::Radius(r) if delta >= floor => worst = worst.max((r - (w0 - (delta - floor)).max(0.0)).abs()),
            SafeRadius::Infeasible { .. } if delta < floor => {}
            other => return Err(fail(format!("single atom {w0}: {other:?} at delta {delta}, floor {floor}"))),
        }
    }
    if worst > 1e-6 {
        return Err(fail(format!("max deviation {worst:e}")));
    }
    Ok(format!("{count} instances, max deviation {worst:e}"))
}

/// Sorted-sample W1 against the transport LP, plus the metric axioms.
pub fn check_wasserstein(count: usize, seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let n = rng.random_range(1..=8);
        let a = samples(&mut rng, n, 5.0);
        let b = samples(&mut rng, n, 5.0);
        let c = samples(&mut rng, n, 5.0);
        worst = worst.max((w1_distance(&a, &b) - w1_distance_lp(&a, &b)?).abs());
        let (ab, bc, ac) = (w1_distance(&a, &b), w1_distance(&b, &c), w1_distance(&a, &c));
        if w1_distance(&a, &a) != 0.0 || (ab - w1_distance(&b, &a)).abs() > 1e-12 || ac > ab + bc + 1e-12 {
            return Err(fail("metric axiom violated".into()));
        }
    }
    if worst > 1e-9 {
        return Err(fail(format!("max deviation {worst:e}")));
    }
    Ok(format!("{count} pairs, max deviation {worst:e}"))
}

/// Random single-step instance with at most two islands and `K ≤ 6`.
pub fn random_step_instance(rng: &mut ChaCha8Rng) -> (f64, VesselModel, MpcSetup, Vec<ClearancePair>) {
    let vessel = VesselModel { ts_h: 0.1, u_min: 0.0, u_max: 25.0, x_min: 0.0, x_max: 100.0 };
    let horizon = rng.random_range(1..=6);
    let x0 = rng.random_range(5.0..20.0);
    let v = rng.random_range(5.0..25.0);
    let setup = MpcSetup {
        horizon,
        q: 1.0,
        p: 1.0,
        r: 0.1,
        rho_slack: 1e6,
        reference: (0..=horizon).map(|k| x0 + v * 0.1 * k as f64).collect(),
        u_prev: rng.random_range(0.0..25.0),
        clearance_guard_km: 0.0,
    };
    let islands = rng.random_range(1..=2);
    let mut pairs = Vec::new();
    for id in 0..islands {
        let center = x0 + rng.random_range(0.0..15.0);
        for k in 1..=horizon {
            let radius = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.2..2.0) };
            pairs.push(ClearancePair { island: id, k, center_km: center, radius_km: radius, infeasible: false });
        }
    }
    (x0, vessel, setup, pairs)
}

/// Branch-and-bound objective against exhaustive side enumeration.
pub fn check_branch_and_bound(count: usize, seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let (x0, vessel, setup, pairs) = random_step_instance(&mut rng);
        let out = solve_with_pairs(x0, &vessel, &setup, pairs.clone())?;
        let oracle = match exhaustive_objective(x0, &vessel, &setup, &pairs, false)? {
            Some(v) => v,
            None => exhaustive_objective(x0, &vessel, &setup, &pairs, true)?
                .ok_or_else(|| fail("no softened assignment".into()))?,
        };
        worst = worst.max((out.solution.objective - oracle).abs() / (1.0 + oracle.abs()));
    }
    if worst > 1e-6 {
        return Err(fail(format!("max relative deviation {worst:e}")));
    }
    Ok(format!("{count} instances, max relative deviation {worst:e}"))
}

/// Small one-island scenario used by the closed-loop checks.
pub fn small_scenario() -> ScenarioConfig {
    ScenarioConfig {
        extent_km: (0.0, 30.0),
        x_max: 30.0,
        shoals: vec![Shoal { center_km: 15.0, height_m: 3.8, width_km: 2.0 }],
        tide_phase_rate_rad_per_km: 0.0,
        tide_phase_rad: 1.2,
        reference: vec![(0.0, 0.0), (1.5, 30.0)],
        duration_h: 1.5,
        repetitions: 4,
        pool_size: 40,
        n_samples: 5,
        theta_grid: vec![0.0005, 0.001],
        ..ScenarioConfig::default()
    }
}

/// DR with `θ = 0` and SAA apply the same inputs.
pub fn check_saa_collapse(cfg: &ScenarioConfig, runs: usize) -> Result<String> {
    let prep = PreparedScenario::new(cfg)?;
    let dr = cfg.controller_for(Method::Dr, 0.0)?;
    let saa = cfg.controller_for(Method::Saa, 0.0)?;
    let mut worst: f64 = 0.0;
    for rep in 0..runs {
        let a = simulate(&prep, &dr, cfg.n_samples, rep)?;
        let b = simulate(&prep, &saa, cfg.n_samples, rep)?;
        if a.log.inputs.len() != b.log.inputs.len() {
            return Err(fail(format!("run {rep}: input sequences differ in length")));
        }
        for (u, v) in a.log.inputs.iter().zip(&b.log.inputs) {
            worst = worst.max((u - v).abs());
        }
    }
    if worst > 1e-8 {
        return Err(fail(format!("max input deviation {worst:e}")));
    }
    Ok(format!("{runs} runs, max input deviation {worst:e}"))
}

/// Obstacle-free constant-speed tracking from matching initial conditions.
pub fn check_zero_cost_tracking(speed: f64) -> Result<String> {
    let cfg = ScenarioConfig {
        shoals: vec![],
        // the reference outlasts the run so every horizon window sees it
        reference: vec![(0.0, 0.0), (4.0, 4.0 * speed)],
        duration_h: 3.0,
        initial_speed_kmh: speed,
        repetitions: 1,
        ..ScenarioConfig::default()
    };
    let prep = PreparedScenario::new(&cfg)?;
    let out = simulate(&prep, &cfg.controller()?, cfg.n_samples, 0)?;
    let cost = closed_loop_cost(&out.log, cfg.q, cfg.p, cfg.r, cfg.initial_speed_kmh);
    if !(cost <= 1e-9) {
        return Err(fail(format!("total cost {cost:e}")));
    }
    Ok(format!("total cost {cost:e}"))
}

/// Two θ-sweeps from the same config produce byte-identical CSVs.
pub fn check_determinism(cfg: &ScenarioConfig) -> Result<String> {
    let render = || -> Result<Vec<u8>> {
        let prep = PreparedScenario::new(cfg)?;
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &sweep_theta(&prep, &cfg.theta_grid)?)?;
        Ok(buf)
    };
    let (a, b) = (render()?, render()?);
    if a != b {
        return Err(fail("repeated sweep produced different CSV bytes".into()));
    }
    Ok(format!("{} identical bytes", a.len()))
}

/// Every check at its full size.
pub fn run_all(seed: u64) -> Vec<Check> {
    let small = small_scenario();
    vec![
        Check::from("safety loss equals projection distance", check_safety_loss(10_000, seed)),
        Check::from("dual LP matches closed form", check_duality(100, seed + 1)),
        Check::from("robust CVaR value floor", check_value_floor(1_000, seed + 2)),
        Check::from("safe radius closed form and single atom", check_safe_radius(500, seed + 3)),
        Check::from("sorted W1 matches transport LP", check_wasserstein(200, seed + 4)),
        Check::from("branch-and-bound matches enumeration", check_branch_and_bound(50, seed + 5)),
        Check::from("zero-theta DR equals SAA", check_saa_collapse(&small, 4)),
        Check::from("obstacle-free tracking has zero cost", check_zero_cost_tracking(20.0)),
        Check::from("sweeps are deterministic", check_determinism(&small)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes_at_reduced_size() {
        for (name, r) in [
            ("loss", check_safety_loss(500, 1)),
            ("dual", check_duality(20, 2)),
            ("floor", check_value_floor(100, 3)),
            ("radius", check_safe_radius(50, 4)),
            ("w1", check_wasserstein(30, 5)),
            ("bnb", check_branch_and_bound(10, 6)),
        ] {
            assert!(r.is_ok(), "{name}: {r:?}");
        }
    }

    #[test]
    fn failures_are_reported_not_panicked() {
        let c = Check::from("x", Err(fail("boom".into())));
        assert!(!c.passed);
        assert!(c.detail.contains("boom"));
    }
}

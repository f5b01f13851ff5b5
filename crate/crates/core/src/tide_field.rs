//! Synthetic tidal depth field and tide-island extraction.
//!
//! Depth at position `p` (km) and time `t` (h) is
//! `bathymetry(p) + amplitude(p) * sin(2π t / T + phase(p)) + e(t)` where
//! `e(t)` is a water-level measurement error drawn deterministically from the
//! field seed and the time (in whole seconds). A tide island is a stretch of
//! the waterway whose depth falls below the vessel's draft; each island gets
//! a fixed center and a time-varying radius.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian-shaped shoal subtracted from the base depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shoal {
    pub center_km: f64,
    pub height_m: f64,
    /// Standard deviation of the Gaussian profile.
    pub width_km: f64,
}

impl Shoal {
    fn lift(&self, p: f64) -> f64 {
        let x = (p - self.center_km) / self.width_km;
        self.height_m * (-0.5 * x * x).exp()
    }
}

/// Base depth profile: a piecewise-linear function through `knots` (or the
/// constant `base_m` when there are none) minus a sum of shoals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bathymetry {
    pub base_m: f64,
    pub knots: Vec<(f64, f64)>,
    pub shoals: Vec<Shoal>,
}

impl Bathymetry {
    pub fn flat(depth_m: f64) -> Self {
        Self {
            base_m: depth_m,
            knots: Vec::new(),
            shoals: Vec::new(),
        }
    }

    pub fn with_shoals(base_m: f64, shoals: Vec<Shoal>) -> Self {
        Self {
            base_m,
            knots: Vec::new(),
            shoals,
        }
    }

    pub fn depth(&self, p: f64) -> f64 {
        let base = piecewise_linear(&self.knots, p).unwrap_or(self.base_m);
        base - self.shoals.iter().map(|s| s.lift(p)).sum::<f64>()
    }
}

fn piecewise_linear(knots: &[(f64, f64)], p: f64) -> Option<f64> {
    let (first, last) = (knots.first()?, knots.last()?);
    if p <= first.0 {
        return Some(first.1);
    }
    if p >= last.0 {
        return Some(last.1);
    }
    let i = knots.partition_point(|k| k.0 <= p);
    let (a, b) = (knots[i - 1], knots[i]);
    let w = (p - a.0) / (b.0 - a.0);
    Some(a.1 + w * (b.1 - a.1))
}

/// Tide amplitude and phase, both affine in position (a tidal wave
/// travelling up the waterway).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TideProfile {
    pub amplitude_m: f64,
    pub amplitude_slope_m_per_km: f64,
    pub phase_rad: f64,
    pub phase_rate_rad_per_km: f64,
}

impl TideProfile {
    pub fn uniform(amplitude_m: f64) -> Self {
        Self {
            amplitude_m,
            amplitude_slope_m_per_km: 0.0,
            phase_rad: 0.0,
            phase_rate_rad_per_km: 0.0,
        }
    }

    pub fn amplitude(&self, p: f64) -> f64 {
        (self.amplitude_m + self.amplitude_slope_m_per_km * p).max(0.0)
    }

    pub fn phase(&self, p: f64) -> f64 {
        self.phase_rad + self.phase_rate_rad_per_km * p
    }
}

/// Synthetic bathymetry plus tidal oscillation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthField {
    pub extent_km: (f64, f64),
    pub grid_km: f64,
    pub bathymetry: Bathymetry,
    pub tide: TideProfile,
    pub period_h: f64,
    pub noise_sd_m: f64,
    pub seed: u64,
}

impl DepthField {
    pub fn new(
        extent_km: (f64, f64),
        grid_km: f64,
        bathymetry: Bathymetry,
        tide: TideProfile,
        period_h: f64,
        noise_sd_m: f64,
        seed: u64,
    ) -> Result<Self> {
        let field = Self {
            extent_km,
            grid_km,
            bathymetry,
            tide,
            period_h,
            noise_sd_m,
            seed,
        };
        field.validate()?;
        Ok(field)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.extent_km;
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(Error::domain(format!("invalid waterway extent [{lo}, {hi}]")));
        }
        if !(self.grid_km > 0.0) {
            return Err(Error::domain("grid resolution must be positive"));
        }
        if !(self.period_h > 0.0) {
            return Err(Error::domain("tide period must be positive"));
        }
        if !(self.noise_sd_m >= 0.0) {
            return Err(Error::domain("noise standard deviation must be non-negative"));
        }
        if self.tide.amplitude_m < 0.0 {
            return Err(Error::domain("tide amplitude must be non-negative"));
        }
        if self.bathymetry.shoals.iter().any(|s| !(s.width_km > 0.0)) {
            return Err(Error::domain("shoal width must be positive"));
        }
        if self.bathymetry.knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::domain("bathymetry knots must be strictly increasing"));
        }
        Ok(())
    }

    fn contains(&self, p: f64) -> bool {
        p >= self.extent_km.0 && p <= self.extent_km.1
    }

    /// Noise-free depth with the tide taken at `cycle` (fraction of a period, in `[0, 1)`).
    pub fn depth_at_cycle(&self, p: f64, cycle: f64) -> f64 {
        let arg = std::f64::consts::TAU * cycle + self.tide.phase(p);
        self.bathymetry.depth(p) + self.tide.amplitude(p) * arg.sin()
    }

    /// Water-level measurement error for the measurement taken at
    /// `key_s` seconds on the tide clock. Zero when noise is disabled.
    pub fn water_level_noise(&self, key_s: i64) -> f64 {
        if self.noise_sd_m == 0.0 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ splitmix64(key_s as u64)));
        let z: f64 = StandardNormal.sample(&mut rng);
        self.noise_sd_m * z
    }

    /// Depth in metres at position `p` (km) and time `t` (h).
    pub fn depth_at(&self, p: f64, t: f64) -> Result<f64> {
        if !self.contains(p) {
            return Err(Error::domain(format!(
                "position {p} km outside waterway [{}, {}]",
                self.extent_km.0, self.extent_km.1
            )));
        }
        if !(t >= 0.0) {
            return Err(Error::domain(format!("time must be non-negative, got {t}")));
        }
        let cycle = (t / self.period_h).rem_euclid(1.0);
        Ok(self.depth_at_cycle(p, cycle) + self.water_level_noise(seconds_key(t)))
    }

    /// Uniform position grid over the extent; the last point is clipped to the upper bound.
    pub fn grid(&self) -> Vec<f64> {
        let (lo, hi) = self.extent_km;
        let n = ((hi - lo) / self.grid_km).round() as usize;
        (0..=n)
            .map(|i| (lo + i as f64 * self.grid_km).min(hi))
            .collect()
    }

    /// Connected components of `{p : depth(p, t) < draft}` on the grid, sorted by position.
    pub fn extract_island_region(&self, draft_m: f64, t: f64) -> Result<Vec<Vec<f64>>> {
        if !(draft_m > 0.0) {
            return Err(Error::domain("draft must be positive"));
        }
        if self.extent_km.1 <= self.extent_km.0 {
            return Err(Error::domain("empty waterway extent"));
        }
        let mut regions = Vec::new();
        let mut current: Vec<f64> = Vec::new();
        for p in self.grid() {
            if self.depth_at(p, t)? < draft_m {
                current.push(p);
            } else if !current.is_empty() {
                regions.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            regions.push(current);
        }
        Ok(regions)
    }
}

fn seconds_key(t_h: f64) -> i64 {
    (t_h * 3600.0).round() as i64
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Smallest interval `(center, radius)` containing every point.
pub fn enclosing_interval(points: &[f64]) -> Result<(f64, f64)> {
    if points.is_empty() {
        return Err(Error::domain("enclosing interval of an empty set"));
    }
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    Ok(((lo + hi) / 2.0, (hi - lo) / 2.0))
}

/// Discrete time grid aligned with the tide clock. Step `j` sits at
/// `(start_step + j) * step_h` hours; the tide period must be a whole number
/// of steps so the tidal part repeats exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub step_h: f64,
    pub start_step: i64,
    pub len: usize,
}

impl TimeGrid {
    pub fn time(&self, j: usize) -> f64 {
        (self.start_step + j as i64) as f64 * self.step_h
    }

    /// Tide period expressed in grid steps.
    pub fn period_steps(&self, period_h: f64) -> Result<i64> {
        if !(self.step_h > 0.0) {
            return Err(Error::domain("time step must be positive"));
        }
        let steps = (period_h / self.step_h).round();
        if steps < 1.0 || ((steps * self.step_h) - period_h).abs() > 1e-9 * period_h {
            return Err(Error::domain(format!(
                "time step {} h does not divide the tide period {period_h} h",
                self.step_h
            )));
        }
        Ok(steps as i64)
    }
}

/// A tide island: fixed center plus the window of positions attributed to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Island {
    /// 1-based index, ordered by position.
    pub id: usize,
    pub center_km: f64,
    /// Union of the island's violating sets over one noise-free period.
    pub zone_km: (f64, f64),
    /// Positions whose violations are attributed to this island.
    pub window_km: (f64, f64),
}

/// Finds the islands of `field` for a vessel of the given draft.
///
/// Each island is a connected component of the union, over one tide period
/// sampled on the time grid, of the noise-free violating sets. Its center is
/// the enclosing-interval center of that union. Measurement windows split
/// the waterway at the midpoints between neighbouring islands.
pub fn detect_islands(field: &DepthField, draft_m: f64, step_h: f64) -> Result<Vec<Island>> {
    if !(draft_m > 0.0) {
        return Err(Error::domain("draft must be positive"));
    }
    let grid = field.grid();
    let period = TimeGrid {
        step_h,
        start_step: 0,
        len: 0,
    }
    .period_steps(field.period_h)?;
    let mut union = vec![false; grid.len()];
    for j in 0..period {
        let cycle = j as f64 / period as f64;
        for (flag, &p) in union.iter_mut().zip(&grid) {
            if !*flag && field.depth_at_cycle(p, cycle) < draft_m {
                *flag = true;
            }
        }
    }
    let mut zones = Vec::new();
    let mut start: Option<usize> = None;
    for i in 0..=grid.len() {
        let on = i < grid.len() && union[i];
        match (on, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                zones.push((grid[s], grid[i - 1]));
                start = None;
            }
            _ => {}
        }
    }
    let n = zones.len();
    Ok(zones
        .iter()
        .enumerate()
        .map(|(k, &(lo, hi))| {
            let left = if k == 0 {
                field.extent_km.0
            } else {
                (zones[k - 1].1 + lo) / 2.0
            };
            let right = if k + 1 == n {
                field.extent_km.1
            } else {
                (hi + zones[k + 1].0) / 2.0
            };
            Island {
                id: k + 1,
                center_km: (lo + hi) / 2.0,
                zone_km: (lo, hi),
                window_km: (left, right),
            }
        })
        .collect())
}

/// Radius gauge for one island at one tide phase: answers "what radius is
/// measured under water-level offset `e`" in `O(log n)`.
struct RadiusGauge {
    /// Distances from the center, descending.
    dist: Vec<f64>,
    /// Running maximum of violation thresholds over `dist` order: a point
    /// violates iff `e < draft - depth`.
    prefix_max: Vec<f64>,
}

impl RadiusGauge {
    fn new(field: &DepthField, island: &Island, draft_m: f64, cycle: f64, grid: &[f64]) -> Self {
        let (lo, hi) = island.window_km;
        let mut pts: Vec<(f64, f64)> = grid
            .iter()
            .filter(|&&p| p >= lo && p <= hi)
            .map(|&p| ((p - island.center_km).abs(), draft_m - field.depth_at_cycle(p, cycle)))
            .collect();
        pts.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut running = f64::NEG_INFINITY;
        let prefix_max = pts
            .iter()
            .map(|&(_, thr)| {
                running = running.max(thr);
                running
            })
            .collect();
        Self {
            dist: pts.into_iter().map(|(d, _)| d).collect(),
            prefix_max,
        }
    }

    fn radius(&self, offset: f64) -> f64 {
        let k = self.prefix_max.partition_point(|&m| m <= offset);
        self.dist.get(k).copied().unwrap_or(0.0)
    }
}

/// Per island: fixed center, realized radius per step and the radius
/// observation set per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleTimeline {
    pub id: usize,
    pub center_km: f64,
    pub grid: TimeGrid,
    pub realized_radius: Vec<f64>,
    pub observation_sets: Vec<Vec<f64>>,
}

impl ObstacleTimeline {
    pub fn sample_count(&self) -> usize {
        self.observation_sets.first().map_or(0, Vec::len)
    }

    pub fn observations(&self, step: usize) -> Result<&[f64]> {
        self.observation_sets
            .get(step)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::domain(format!("island {} has no observation set at step {step}", self.id)))
    }
}

/// Historical radius measurements for one island: at each step `j`,
/// `values[j][i - 1]` is the radius measured `i` tide periods earlier.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusRecord {
    pub id: usize,
    pub center_km: f64,
    pub grid: TimeGrid,
    pub current: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl RadiusRecord {
    /// Measures `depth` past periods for island `island_id` (1-based) at every grid step.
    pub fn measure(
        field: &DepthField,
        draft_m: f64,
        island_id: usize,
        grid: &TimeGrid,
        depth: usize,
    ) -> Result<Self> {
        let islands = detect_islands(field, draft_m, grid.step_h)?;
        let island = island_id
            .checked_sub(1)
            .and_then(|i| islands.get(i))
            .ok_or_else(|| {
                Error::domain(format!("island {island_id} out of range 1..={}", islands.len()))
            })?;
        Self::measure_island(field, draft_m, island, grid, depth)
    }

    pub fn measure_island(
        field: &DepthField,
        draft_m: f64,
        island: &Island,
        grid: &TimeGrid,
        depth: usize,
    ) -> Result<Self> {
        let period = grid.period_steps(field.period_h)?;
        let positions = field.grid();
        let mut current = Vec::with_capacity(grid.len);
        let mut values = Vec::with_capacity(grid.len);
        for j in 0..grid.len {
            let step = grid.start_step + j as i64;
            let cycle = step.rem_euclid(period) as f64 / period as f64;
            let gauge = RadiusGauge::new(field, island, draft_m, cycle, &positions);
            let key = |s: i64| seconds_key(s as f64 * grid.step_h);
            current.push(gauge.radius(field.water_level_noise(key(step))));
            values.push(
                (1..=depth as i64)
                    .map(|i| gauge.radius(field.water_level_noise(key(step - i * period))))
                    .collect(),
            );
        }
        Ok(Self {
            id: island.id,
            center_km: island.center_km,
            grid: *grid,
            current,
            values,
        })
    }

    /// Timeline whose observation set at each step is the given record indices (0-based).
    pub fn timeline_from(&self, indices: &[usize]) -> Result<ObstacleTimeline> {
        let depth = self.values.first().map_or(0, Vec::len);
        if let Some(&bad) = indices.iter().find(|&&i| i >= depth) {
            return Err(Error::domain(format!("record index {bad} beyond depth {depth}")));
        }
        Ok(ObstacleTimeline {
            id: self.id,
            center_km: self.center_km,
            grid: self.grid,
            realized_radius: self.current.clone(),
            observation_sets: self
                .values
                .iter()
                .map(|row| indices.iter().map(|&i| row[i]).collect())
                .collect(),
        })
    }
}

/// Builds the timeline of island `island_id` (1-based): the observation set
/// at step `t` holds the radii measured at `t - i T` for `i = 1..=n`, each
/// with its own water-level error.
pub fn build_obstacle_timeline(
    field: &DepthField,
    draft_m: f64,
    island_id: usize,
    grid: &TimeGrid,
    n: usize,
) -> Result<ObstacleTimeline> {
    if n == 0 {
        return Err(Error::domain("sample count N must be at least 1"));
    }
    let record = RadiusRecord::measure(field, draft_m, island_id, grid, n)?;
    let idx: Vec<usize> = (0..n).collect();
    record.timeline_from(&idx)
}

/// Uniform discrete distribution over radius observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    samples: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::domain("empirical distribution needs at least one sample"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::domain("samples must be finite"));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.samples.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn empirical_distribution(obs: &[f64]) -> Result<EmpiricalDistribution> {
    EmpiricalDistribution::new(obs.to_vec())
}

/// Writes timelines as CSV: `island,t,realized_radius,obs_1..obs_N`.
pub fn write_timelines_csv<W: std::io::Write>(mut out: W, timelines: &[ObstacleTimeline]) -> Result<()> {
    let n = timelines.first().map_or(0, ObstacleTimeline::sample_count);
    let mut header = String::from("island,t,realized_radius");
    for i in 1..=n {
        header.push_str(&format!(",obs_{i}"));
    }
    writeln!(out, "{header}")?;
    for tl in timelines {
        for (j, (r, obs)) in tl.realized_radius.iter().zip(&tl.observation_sets).enumerate() {
            let mut line = format!("{},{},{}", tl.id, tl.grid.time(j), r);
            for o in obs {
                line.push_str(&format!(",{o}"));
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

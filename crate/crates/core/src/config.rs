//! Scenario files: flat `key = value` lines, `#` starts a comment.
//!
//! Parsing is strict. Unknown or repeated keys and malformed values are
//! errors carrying the offending line number; cross-field validation errors
//! report line 0. Every key is optional and falls back to the default listed
//! in [`KEYS`].
//!
//! List values are comma separated. Pairs use `:` (`shoals` entries are
//! `center:height:width`).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::{Controller, MpcWeights, Reference, VesselModel};
use crate::risk::RiskParams;
use crate::tide_field::{Bathymetry, DepthField, Shoal, TideProfile, TimeGrid};

/// Controller family selected by the `controller` key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dr,
    Saa,
    Cc,
    Free,
}

impl Method {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dr" => Some(Method::Dr),
            "saa" => Some(Method::Saa),
            "cc" => Some(Method::Cc),
            "free" => Some(Method::Free),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Dr => "dr",
            Method::Saa => "saa",
            Method::Cc => "cc",
            Method::Free => "free",
        }
    }
}

/// Every tunable of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    // waterway
    pub extent_km: (f64, f64),
    pub grid_km: f64,
    pub period_h: f64,
    pub noise_sd_m: f64,
    pub seed: u64,
    pub base_depth_m: f64,
    pub bathymetry: Vec<(f64, f64)>,
    pub shoals: Vec<Shoal>,
    pub tide_amplitude_m: f64,
    pub tide_amplitude_slope_m_per_km: f64,
    pub tide_phase_rad: f64,
    pub tide_phase_rate_rad_per_km: f64,
    pub draft_m: f64,
    // vessel and controller
    pub ts_h: f64,
    pub horizon: usize,
    pub q: f64,
    pub p: f64,
    pub r: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub rho_slack: f64,
    pub clearance_guard_km: f64,
    pub alpha: f64,
    pub delta: f64,
    pub theta: f64,
    pub controller: Method,
    // experiment
    pub n_samples: usize,
    pub repetitions: usize,
    pub pool_size: usize,
    pub reference: Vec<(f64, f64)>,
    pub start_h: f64,
    pub duration_h: f64,
    pub x0: f64,
    pub initial_speed_kmh: f64,
    pub theta_grid: Vec<f64>,
    pub n_grid: Vec<usize>,
}

/// `(key, description)` for every accepted key, in serialization order.
pub const KEYS: &[(&str, &str)] = &[
    ("extent_km", "waterway extent `lo, hi` (km)"),
    ("grid_km", "position grid spacing (km)"),
    ("period_h", "tide period (h)"),
    ("noise_sd_m", "water-level measurement error standard deviation (m)"),
    ("seed", "seed for every random draw"),
    ("base_depth_m", "depth outside the bathymetry knots (m)"),
    ("bathymetry", "piecewise-linear base depth knots `p:depth, ...` (km:m)"),
    ("shoals", "Gaussian shoals `center:height:width, ...` (km:m:km)"),
    ("tide_amplitude_m", "tide amplitude at p = 0 (m)"),
    ("tide_amplitude_slope_m_per_km", "amplitude change per km (m/km)"),
    ("tide_phase_rad", "tide phase at p = 0 (rad)"),
    ("tide_phase_rate_rad_per_km", "tide phase change per km (rad/km)"),
    ("draft_m", "vessel draft (m)"),
    ("ts_h", "sampling time (h)"),
    ("horizon", "prediction horizon K (steps)"),
    ("q", "stage tracking weight"),
    ("p", "terminal tracking weight"),
    ("r", "input-rate weight"),
    ("u_min", "minimum speed (km/h)"),
    ("u_max", "maximum speed (km/h)"),
    ("x_min", "minimum position (km)"),
    ("x_max", "maximum position (km)"),
    ("rho_slack", "penalty per km of softened clearance"),
    ("clearance_guard_km", "margin added to every nonzero clearance radius (km)"),
    ("alpha", "CVaR confidence level"),
    ("delta", "risk tolerance (km)"),
    ("theta", "Wasserstein radius (km)"),
    ("controller", "dr | saa | cc | free"),
    ("n_samples", "observations per set N"),
    ("repetitions", "Monte-Carlo runs per batch"),
    ("pool_size", "past periods measured per step (training plus validation)"),
    ("reference", "reference waypoints `t:p, ...` (h:km, t relative to start)"),
    ("start_h", "tide-clock time of the first step (h)"),
    ("duration_h", "closed-loop duration (h)"),
    ("x0", "initial position (km)"),
    ("initial_speed_kmh", "input assumed before the first step (km/h)"),
    ("theta_grid", "sweep-theta values (km)"),
    ("n_grid", "sweep-n sample counts"),
];

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            extent_km: (0.0, 100.0),
            grid_km: 0.05,
            period_h: 12.4,
            noise_sd_m: 0.01,
            seed: 20_240_601,
            base_depth_m: 9.0,
            bathymetry: Vec::new(),
            shoals: vec![
                Shoal { center_km: 20.0, height_m: 1.1, width_km: 2.5 },
                Shoal { center_km: 45.0, height_m: 1.0, width_km: 3.0 },
                Shoal { center_km: 70.0, height_m: 1.2, width_km: 2.0 },
                Shoal { center_km: 88.0, height_m: 0.95, width_km: 2.5 },
            ],
            tide_amplitude_m: 1.5,
            tide_amplitude_slope_m_per_km: 0.0,
            tide_phase_rad: 5.4,
            tide_phase_rate_rad_per_km: -0.025,
            draft_m: 7.0,
            ts_h: 0.1,
            horizon: 10,
            q: 1.0,
            p: 1.0,
            r: 0.1,
            u_min: 0.0,
            u_max: 25.0,
            x_min: 0.0,
            x_max: 100.0,
            rho_slack: 1e6,
            clearance_guard_km: 1e-6,
            alpha: 0.95,
            delta: 0.02,
            theta: 0.001,
            controller: Method::Dr,
            n_samples: 11,
            repetitions: 100,
            pool_size: 1200,
            reference: vec![(0.0, 0.0), (5.0, 100.0)],
            start_h: 0.0,
            duration_h: 5.0,
            x0: 0.0,
            initial_speed_kmh: 0.0,
            theta_grid: vec![0.0002, 0.0004, 0.0006, 0.0008, 0.001],
            n_grid: vec![1, 3, 6, 11],
        }
    }
}

fn bad(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| bad(line, format!("`{key}`: cannot parse `{}`", s.trim())))
}

fn list<T: std::str::FromStr>(line: usize, key: &str, s: &str) -> Result<Vec<T>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|item| num(line, key, item)).collect()
}

fn tuples(line: usize, key: &str, s: &str, arity: usize) -> Result<Vec<Vec<f64>>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|item| {
            let parts: Vec<f64> = item.split(':').map(|v| num(line, key, v)).collect::<Result<_>>()?;
            if parts.len() != arity {
                return Err(bad(line, format!("`{key}`: expected {arity} `:`-separated values in `{}`", item.trim())));
            }
            Ok(parts)
        })
        .collect()
}

fn pairs(line: usize, key: &str, s: &str) -> Result<Vec<(f64, f64)>> {
    Ok(tuples(line, key, s, 2)?.into_iter().map(|v| (v[0], v[1])).collect())
}

impl ScenarioConfig {
    /// Parses and validates a config text.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(bad(line, format!("expected `key = value`, got `{content}`")));
            };
            let key = key.trim();
            let Some(&(known, _)) = KEYS.iter().find(|(k, _)| *k == key) else {
                return Err(bad(line, format!("unknown key `{key}`")));
            };
            if seen.contains(&known) {
                return Err(bad(line, format!("duplicate key `{key}`")));
            }
            seen.push(known);
            cfg.set(line, known, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        match key {
            "extent_km" => {
                let e: Vec<f64> = list(line, key, v)?;
                if e.len() != 2 {
                    return Err(bad(line, "`extent_km` needs two values"));
                }
                self.extent_km = (e[0], e[1]);
            }
            "grid_km" => self.grid_km = num(line, key, v)?,
            "period_h" => self.period_h = num(line, key, v)?,
            "noise_sd_m" => self.noise_sd_m = num(line, key, v)?,
            "seed" => self.seed = num(line, key, v)?,
            "base_depth_m" => self.base_depth_m = num(line, key, v)?,
            "bathymetry" => self.bathymetry = pairs(line, key, v)?,
            "shoals" => {
                self.shoals = tuples(line, key, v, 3)?
                    .into_iter()
                    .map(|s| Shoal { center_km: s[0], height_m: s[1], width_km: s[2] })
                    .collect()
            }
            "tide_amplitude_m" => self.tide_amplitude_m = num(line, key, v)?,
            "tide_amplitude_slope_m_per_km" => self.tide_amplitude_slope_m_per_km = num(line, key, v)?,
            "tide_phase_rad" => self.tide_phase_rad = num(line, key, v)?,
            "tide_phase_rate_rad_per_km" => self.tide_phase_rate_rad_per_km = num(line, key, v)?,
            "draft_m" => self.draft_m = num(line, key, v)?,
            "ts_h" => self.ts_h = num(line, key, v)?,
            "horizon" => self.horizon = num(line, key, v)?,
            "q" => self.q = num(line, key, v)?,
            "p" => self.p = num(line, key, v)?,
            "r" => self.r = num(line, key, v)?,
            "u_min" => self.u_min = num(line, key, v)?,
            "u_max" => self.u_max = num(line, key, v)?,
            "x_min" => self.x_min = num(line, key, v)?,
            "x_max" => self.x_max = num(line, key, v)?,
            "rho_slack" => self.rho_slack = num(line, key, v)?,
            "clearance_guard_km" => self.clearance_guard_km = num(line, key, v)?,
            "alpha" => self.alpha = num(line, key, v)?,
            "delta" => self.delta = num(line, key, v)?,
            "theta" => self.theta = num(line, key, v)?,
            "controller" => {
                self.controller = Method::parse(v)
                    .ok_or_else(|| bad(line, format!("`controller`: expected dr, saa, cc or free, got `{v}`")))?
            }
            "n_samples" => self.n_samples = num(line, key, v)?,
            "repetitions" => self.repetitions = num(line, key, v)?,
            "pool_size" => self.pool_size = num(line, key, v)?,
            "reference" => self.reference = pairs(line, key, v)?,
            "start_h" => self.start_h = num(line, key, v)?,
            "duration_h" => self.duration_h = num(line, key, v)?,
            "x0" => self.x0 = num(line, key, v)?,
            "initial_speed_kmh" => self.initial_speed_kmh = num(line, key, v)?,
            "theta_grid" => self.theta_grid = list(line, key, v)?,
            "n_grid" => self.n_grid = list(line, key, v)?,
            _ => unreachable!("key table and setter disagree on `{key}`"),
        }
        Ok(())
    }

    /// Cross-field checks; errors report line 0.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(bad(0, m));
        let to_cfg = |e: Error| match e {
            Error::Domain(m) | Error::Numerical { message: m, .. } | Error::Io(m) => bad(0, m),
            other => other,
        };
        self.field().map_err(to_cfg)?;
        self.vessel().validate().map_err(to_cfg)?;
        self.risk().map_err(to_cfg)?;
        self.reference_path().map_err(to_cfg)?;
        TimeGrid { step_h: self.ts_h, start_step: 0, len: 0 }
            .period_steps(self.period_h)
            .map_err(to_cfg)?;
        if !(self.draft_m > 0.0) {
            return fail("draft_m must be positive".into());
        }
        if self.horizon == 0 {
            return fail("horizon must be at least 1".into());
        }
        if !(self.q >= 0.0 && self.p >= 0.0 && self.r > 0.0) {
            return fail("weights need q, p >= 0 and r > 0".into());
        }
        if !(self.rho_slack > 0.0) || !(self.clearance_guard_km >= 0.0) {
            return fail("rho_slack must be positive and clearance_guard_km non-negative".into());
        }
        if self.n_samples == 0 || self.repetitions == 0 {
            return fail("n_samples and repetitions must be at least 1".into());
        }
        if self.pool_size <= self.n_samples {
            return fail(format!(
                "pool_size {} must exceed n_samples {} to leave validation values",
                self.pool_size, self.n_samples
            ));
        }
        if self.n_grid.iter().any(|&n| n == 0 || n >= self.pool_size) {
            return fail("n_grid entries must lie in 1..pool_size".into());
        }
        if self.theta_grid.iter().any(|t| !(*t >= 0.0)) {
            return fail("theta_grid entries must be non-negative".into());
        }
        if !(self.start_h >= 0.0) || !(self.duration_h >= 0.0) {
            return fail("start_h and duration_h must be non-negative".into());
        }
        if !whole_steps(self.start_h, self.ts_h) || !whole_steps(self.duration_h, self.ts_h) {
            return fail("start_h and duration_h must be multiples of ts_h".into());
        }
        if !(self.x0 >= self.x_min && self.x0 <= self.x_max) {
            return fail(format!("x0 = {} lies outside [x_min, x_max]", self.x0));
        }
        if self.x_min < self.extent_km.0 || self.x_max > self.extent_km.1 {
            return fail("state bounds must lie within the waterway extent".into());
        }
        Ok(())
    }

    pub fn field(&self) -> Result<DepthField> {
        let mut bathymetry = Bathymetry::with_shoals(self.base_depth_m, self.shoals.clone());
        bathymetry.knots = self.bathymetry.clone();
        DepthField::new(
            self.extent_km,
            self.grid_km,
            bathymetry,
            TideProfile {
                amplitude_m: self.tide_amplitude_m,
                amplitude_slope_m_per_km: self.tide_amplitude_slope_m_per_km,
                phase_rad: self.tide_phase_rad,
                phase_rate_rad_per_km: self.tide_phase_rate_rad_per_km,
            },
            self.period_h,
            self.noise_sd_m,
            self.seed,
        )
    }

    pub fn vessel(&self) -> VesselModel {
        VesselModel {
            ts_h: self.ts_h,
            u_min: self.u_min,
            u_max: self.u_max,
            x_min: self.x_min,
            x_max: self.x_max,
        }
    }

    pub fn weights(&self) -> MpcWeights {
        MpcWeights {
            horizon: self.horizon,
            q: self.q,
            p: self.p,
            r: self.r,
            rho_slack: self.rho_slack,
            clearance_guard_km: self.clearance_guard_km,
        }
    }

    pub fn risk(&self) -> Result<RiskParams> {
        RiskParams::new(self.alpha, self.delta, self.theta)
    }

    pub fn reference_path(&self) -> Result<Reference> {
        Reference::new(self.reference.clone())
    }

    pub fn controller_for(&self, method: Method, theta: f64) -> Result<Controller> {
        let risk = self.risk()?.with_theta(theta);
        risk.validate()?;
        Ok(match method {
            Method::Dr => Controller::Dr(risk),
            Method::Saa => Controller::Saa(risk),
            Method::Cc => Controller::Cc { alpha: self.alpha },
            Method::Free => Controller::Free,
        })
    }

    /// Controller named by the `controller` and `theta` keys.
    pub fn controller(&self) -> Result<Controller> {
        self.controller_for(self.controller, self.theta)
    }

    /// Closed-loop step count.
    pub fn steps(&self) -> usize {
        (self.duration_h / self.ts_h).round() as usize
    }

    pub fn start_step(&self) -> i64 {
        (self.start_h / self.ts_h).round() as i64
    }

    /// Config text that parses back to `self`.
    pub fn serialize(&self) -> String {
        let join = |v: Vec<String>| v.join(", ");
        let mut out = String::new();
        for &(key, doc) in KEYS {
            let value = match key {
                "extent_km" => format!("{:?}, {:?}", self.extent_km.0, self.extent_km.1),
                "grid_km" => format!("{:?}", self.grid_km),
                "period_h" => format!("{:?}", self.period_h),
                "noise_sd_m" => format!("{:?}", self.noise_sd_m),
                "seed" => self.seed.to_string(),
                "base_depth_m" => format!("{:?}", self.base_depth_m),
                "bathymetry" => join(self.bathymetry.iter().map(|(a, b)| format!("{a:?}:{b:?}")).collect()),
                "shoals" => join(
                    self.shoals
                        .iter()
                        .map(|s| format!("{:?}:{:?}:{:?}", s.center_km, s.height_m, s.width_km))
                        .collect(),
                ),
                "tide_amplitude_m" => format!("{:?}", self.tide_amplitude_m),
                "tide_amplitude_slope_m_per_km" => format!("{:?}", self.tide_amplitude_slope_m_per_km),
                "tide_phase_rad" => format!("{:?}", self.tide_phase_rad),
                "tide_phase_rate_rad_per_km" => format!("{:?}", self.tide_phase_rate_rad_per_km),
                "draft_m" => format!("{:?}", self.draft_m),
                "ts_h" => format!("{:?}", self.ts_h),
                "horizon" => self.horizon.to_string(),
                "q" => format!("{:?}", self.q),
                "p" => format!("{:?}", self.p),
                "r" => format!("{:?}", self.r),
                "u_min" => format!("{:?}", self.u_min),
                "u_max" => format!("{:?}", self.u_max),
                "x_min" => format!("{:?}", self.x_min),
                "x_max" => format!("{:?}", self.x_max),
                "rho_slack" => format!("{:?}", self.rho_slack),
                "clearance_guard_km" => format!("{:?}", self.clearance_guard_km),
                "alpha" => format!("{:?}", self.alpha),
                "delta" => format!("{:?}", self.delta),
                "theta" => format!("{:?}", self.theta),
                "controller" => self.controller.as_str().to_string(),
                "n_samples" => self.n_samples.to_string(),
                "repetitions" => self.repetitions.to_string(),
                "pool_size" => self.pool_size.to_string(),
                "reference" => join(self.reference.iter().map(|(a, b)| format!("{a:?}:{b:?}")).collect()),
                "start_h" => format!("{:?}", self.start_h),
                "duration_h" => format!("{:?}", self.duration_h),
                "x0" => format!("{:?}", self.x0),
                "initial_speed_kmh" => format!("{:?}", self.initial_speed_kmh),
                "theta_grid" => join(self.theta_grid.iter().map(|t| format!("{t:?}")).collect()),
                "n_grid" => join(self.n_grid.iter().map(|n| n.to_string()).collect()),
                _ => unreachable!(),
            };
            let _ = writeln!(out, "# {doc}\n{key} = {value}");
        }
        out
    }
}

fn whole_steps(t: f64, step: f64) -> bool {
    let k = (t / step).round();
    (k * step - t).abs() <= 1e-9 * (1.0 + t.abs())
}

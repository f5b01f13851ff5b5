//! Output artifacts: results table, per-run trajectories, batch summary,
//! solver audit log and a time-space SVG.
//!
//! Column order of the CSV files is part of the interface and pinned by
//! [`RESULTS_COLUMNS`] and [`TRAJECTORY_COLUMNS`].

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::config::Method;
use crate::error::Result;
use crate::mpc::StepAudit;
use crate::sim::{BatchResult, RunOutcome};
use crate::tide_field::ObstacleTimeline;

pub const RESULTS_COLUMNS: [&str; 8] = [
    "method",
    "theta",
    "n",
    "cost_mean",
    "cost_std",
    "margin_mean",
    "margin_std",
    "collision_rate",
];

pub const TRAJECTORY_COLUMNS: [&str; 4] = ["t", "y", "u", "clearance"];

pub fn method_label(m: Method) -> &'static str {
    match m {
        Method::Dr => "DR-MPC",
        Method::Saa => "SAA-MPC",
        Method::Cc => "CC-MPC",
        Method::Free => "FREE",
    }
}

/// One row per batch; `theta` is empty for CC-MPC and FREE.
pub fn write_results_csv<W: Write>(mut out: W, rows: &[BatchResult]) -> Result<()> {
    writeln!(out, "{}", RESULTS_COLUMNS.join(","))?;
    for r in rows {
        let theta = r.theta.map(|t| t.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.2}",
            method_label(r.method),
            theta,
            r.n,
            r.cost_mean,
            r.cost_std,
            r.margin_mean,
            r.margin_std,
            r.collision_rate
        )?;
    }
    Ok(())
}

/// `t` (h from run start), position, applied input (empty on the final
/// state) and clearance to the nearest realized island.
pub fn write_trajectory_csv<W: Write>(mut out: W, run: &RunOutcome, ts_h: f64) -> Result<()> {
    writeln!(out, "{}", TRAJECTORY_COLUMNS.join(","))?;
    for (t, (&y, &c)) in run.log.states.iter().zip(&run.clearance).enumerate() {
        let u = run.log.inputs.get(t).map(|u| format!("{u:.9}")).unwrap_or_default();
        writeln!(out, "{:.4},{y:.9},{u},{c:.9}", t as f64 * ts_h)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BatchSummary {
    method: &'static str,
    theta: Option<f64>,
    n: usize,
    runs: usize,
    invalid: usize,
    cost_mean: f64,
    cost_std: f64,
    margin_mean: f64,
    margin_std: f64,
    collision_rate: f64,
    total_cost: Vec<f64>,
    safety_margin: Vec<f64>,
    collision: Vec<bool>,
}

/// Pretty JSON array with one summary object per batch, including the
/// per-run metric vectors.
pub fn write_batch_json<W: Write>(mut out: W, rows: &[BatchResult]) -> Result<()> {
    let summaries: Vec<BatchSummary> = rows
        .iter()
        .map(|r| BatchSummary {
            method: method_label(r.method),
            theta: r.theta,
            n: r.n,
            runs: r.runs,
            invalid: r.invalid,
            cost_mean: r.cost_mean,
            cost_std: r.cost_std,
            margin_mean: r.margin_mean,
            margin_std: r.margin_std,
            collision_rate: r.collision_rate,
            total_cost: r.metrics.iter().map(|m| m.total_cost).collect(),
            safety_margin: r.metrics.iter().map(|m| m.safety_margin).collect(),
            collision: r.metrics.iter().map(|m| m.collision).collect(),
        })
        .collect();
    serde_json::to_writer_pretty(&mut out, &summaries).map_err(|e| crate::Error::Io(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

/// One JSON object per controller solve.
pub fn write_audit_jsonl<W: Write>(mut out: W, audit: &[StepAudit]) -> Result<()> {
    for a in audit {
        serde_json::to_writer(&mut out, a).map_err(|e| crate::Error::Io(e.to_string()))?;
        writeln!(out)?;
    }
    Ok(())
}

/// A closed-loop trajectory to draw.
pub struct PlotTrace<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub states: &'a [f64],
}

/// Time-space plot: realized islands (dark), the envelope of the largest
/// observed radius (light), the reference (dashed) and trajectories.
pub fn time_space_svg(
    timelines: &[ObstacleTimeline],
    reference: &[f64],
    traces: &[PlotTrace],
    ts_h: f64,
    extent_km: (f64, f64),
) -> String {
    const W: f64 = 900.0;
    const H: f64 = 600.0;
    const M: f64 = 50.0;
    let steps = reference.len().max(traces.iter().map(|t| t.states.len()).max().unwrap_or(0)).max(2);
    let t_max = (steps - 1) as f64 * ts_h;
    let (p0, p1) = extent_km;
    let sx = |t: f64| M + (W - 2.0 * M) * t / t_max;
    let sy = |p: f64| H - M - (H - 2.0 * M) * (p - p0) / (p1 - p0);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    for tl in timelines {
        for j in 0..steps.min(tl.realized_radius.len()) {
            let t = j as f64 * ts_h;
            let x = sx(t);
            let w = sx(t + ts_h) - x;
            let env = tl.observation_sets[j].iter().copied().fold(0.0, f64::max);
            for (r, fill) in [(env, "#f4c7a1"), (tl.realized_radius[j], "#b5651d")] {
                if r > 0.0 {
                    let top = sy((tl.center_km + r).min(p1));
                    let bottom = sy((tl.center_km - r).max(p0));
                    let _ = writeln!(
                        svg,
                        r#"<rect x="{x:.2}" y="{top:.2}" width="{w:.2}" height="{:.2}" fill="{fill}"/>"#,
                        bottom - top
                    );
                }
            }
        }
    }
    let polyline = |pts: &[f64]| {
        pts.iter()
            .enumerate()
            .map(|(j, &p)| format!("{:.2},{:.2}", sx(j as f64 * ts_h), sy(p)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let _ = writeln!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="black" stroke-dasharray="6 4" stroke-width="1.5"/>"#,
        polyline(reference)
    );
    for tr in traces {
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            polyline(tr.states),
            tr.color
        );
    }
    // axes and legend
    let _ = writeln!(
        svg,
        r#"<line x1="{M}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{M}" y1="{M}" x2="{M}" y2="{b}" stroke="black"/>"#,
        b = H - M,
        r = W - M
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">time (h)</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">position (km)</text>"#,
        H / 2.0,
        H / 2.0
    );
    for k in 0..=4 {
        let t = t_max * k as f64 / 4.0;
        let p = p0 + (p1 - p0) * k as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{}" text-anchor="middle">{t:.1}</text>"#, sx(t), H - M + 16.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{p:.0}</text>"#, M - 6.0, sy(p) + 4.0);
    }
    let mut ly = M + 4.0;
    for (label, color, dash) in std::iter::once(("reference", "black", true))
        .chain(traces.iter().map(|t| (t.label, t.color, false)))
    {
        let d = if dash { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<line x1="{x1}" y1="{ly}" x2="{x2}" y2="{ly}" stroke="{color}" stroke-width="2"{d}/><text x="{tx}" y="{ty}">{label}</text>"#,
            x1 = W - M - 150.0,
            x2 = W - M - 125.0,
            tx = W - M - 118.0,
            ty = ly + 4.0
        );
        ly += 16.0;
    }
    svg.push_str("</svg>\n");
    svg
}

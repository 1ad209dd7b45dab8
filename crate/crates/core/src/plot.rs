//! Static SVG rendering of a trajectory log.

use std::fmt::Write;

use crate::certificates::BarrierId;
use crate::perception::LaneGeometry;
use crate::simulator::{Record, TrajectoryLog};

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];
const CAR_LENGTH: f64 = 4.5;
const CAR_WIDTH: f64 = 1.8;

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

/// Linear map from data to pixels.
#[derive(Clone, Copy)]
struct Axis {
    d0: f64,
    d1: f64,
    p0: f64,
    p1: f64,
}

impl Axis {
    fn new(d0: f64, d1: f64, p0: f64, p1: f64) -> Self {
        let (d0, d1) = if d1 > d0 { (d0, d1) } else { (d0 - 0.5, d0 + 0.5) };
        Self { d0, d1, p0, p1 }
    }

    fn at(&self, d: f64) -> f64 {
        self.p0 + (d - self.d0) / (self.d1 - self.d0) * (self.p1 - self.p0)
    }

    fn scale(&self) -> f64 {
        (self.p1 - self.p0) / (self.d1 - self.d0)
    }
}

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Round tick spacing giving at most about `n` intervals over `span`.
fn tick_step(span: f64, n: f64) -> f64 {
    let raw = (span / n).max(f64::MIN_POSITIVE);
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

/// Tick marks and labels along a horizontal axis at pixel row `y`.
fn x_ticks(out: &mut String, ax: &Axis, y: f64, n: f64) {
    let step = tick_step(ax.d1 - ax.d0, n);
    let first = (ax.d0 / step - 1e-9).ceil() as i64;
    let last = (ax.d1 / step + 1e-9).floor() as i64;
    for k in first..=last {
        let t = k as f64 * step;
        let px = ax.at(t);
        let label = (t * 1e6).round() / 1e6 + 0.0;
        let _ = writeln!(out, r##"<line x1="{px:.2}" y1="{y:.2}" x2="{px:.2}" y2="{:.2}" stroke="#555"/>"##, y + 4.0);
        let _ = writeln!(out, r#"<text x="{px:.2}" y="{:.2}" font-size="10" text-anchor="middle">{label}</text>"#, y + 15.0);
    }
}

fn polyline(out: &mut String, pts: &[(f64, f64)], stroke: &str, extra: &str) {
    if pts.is_empty() {
        return;
    }
    let mut d = String::new();
    for (k, (x, y)) in pts.iter().enumerate() {
        let _ = write!(d, "{}{:.2},{:.2}", if k == 0 { "" } else { " " }, x, y);
    }
    let _ = writeln!(out, r#"<polyline points="{d}" fill="none" stroke="{stroke}" {extra}/>"#);
}

/// Top-down view: lane boundaries, each vehicle's path, and its outline
/// every `shadow_period` seconds, darker as time advances. The lateral axis
/// is stretched.
pub fn trajectory_svg(log: &TrajectoryLog, geometry: &LaneGeometry, shadow_period: f64) -> String {
    let (width, height) = (1200.0, 360.0);
    let (left, right, top) = (40.0, 20.0, 40.0);
    let road_h = 220.0;
    let xs = log.records.iter().map(|r| r.state.x);
    let x_min = xs.clone().fold(f64::INFINITY, f64::min) - CAR_LENGTH;
    let x_max = xs.fold(f64::NEG_INFINITY, f64::max) + CAR_LENGTH;
    let w = geometry.lane_width;
    let y_lo = geometry.center(1) - w / 2.0;
    let y_hi = geometry.center(geometry.lane_count) + w / 2.0;
    let (x_min, x_max) = if x_min.is_finite() { (x_min, x_max) } else { (0.0, 1.0) };
    let ax = Axis::new(x_min, x_max, left, width - right);
    let ay = Axis::new(y_lo, y_hi, top + road_h, top);

    let mut out = String::new();
    header(&mut out, width, height);
    let _ = writeln!(out, r#"<text x="{left}" y="20">trajectories (x [m] horizontal, y [m] vertical, lateral axis stretched)</text>"#);
    let _ = writeln!(
        out,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#f2f2f2"/>"##,
        ax.at(x_min),
        ay.at(y_hi),
        ax.at(x_max) - ax.at(x_min),
        ay.at(y_lo) - ay.at(y_hi)
    );
    for k in 0..=geometry.lane_count {
        let y = y_lo + k as f64 * w;
        let dash = if k == 0 || k == geometry.lane_count { "" } else { r#"stroke-dasharray="12 8""# };
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#555" stroke-width="1.5" {dash}/>"##,
            ax.at(x_min),
            ay.at(y),
            ax.at(x_max),
            ay.at(y)
        );
    }

    x_ticks(&mut out, &ax, ay.at(y_lo), 10.0);

    let horizon = log.records.iter().map(|r| r.time).fold(0.0, f64::max);
    let names = log.vehicles();
    for (i, name) in names.iter().enumerate() {
        let recs: Vec<&Record> = log.of(name).collect();
        let pts: Vec<(f64, f64)> = recs.iter().map(|r| (ax.at(r.state.x), ay.at(r.state.y))).collect();
        polyline(&mut out, &pts, color(i), r#"stroke-width="1.2""#);
        let mut next = 0.0;
        for r in &recs {
            if shadow_period > 0.0 && r.time + 1e-9 < next {
                continue;
            }
            next += shadow_period.max(f64::MIN_POSITIVE);
            let shade = if horizon > 0.0 { 0.15 + 0.75 * r.time / horizon } else { 0.9 };
            let (cx, cy) = (ax.at(r.state.x), ay.at(r.state.y));
            let (lx, ly) = (CAR_LENGTH * ax.scale(), CAR_WIDTH * -ay.scale());
            // heading drawn in data space, so the stretched axis exaggerates it too
            let angle = -(r.state.psi.tan() * -ay.scale() / ax.scale()).atan().to_degrees();
            let _ = writeln!(
                out,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}" fill-opacity="{:.2}" stroke="#222" stroke-width="0.5" transform="rotate({:.3} {:.2} {:.2})"/>"##,
                cx - lx / 2.0,
                cy - ly / 2.0,
                lx,
                ly,
                color(i),
                shade,
                angle,
                cx,
                cy
            );
            let _ = writeln!(
                out,
                r##"<text x="{:.2}" y="{:.2}" font-size="9" text-anchor="middle" fill="#333">{:.0}</text>"##,
                cx,
                cy - ly / 2.0 - 2.0,
                r.time
            );
            if shadow_period <= 0.0 {
                break;
            }
        }
    }
    for (i, name) in names.iter().enumerate() {
        let x = left + 150.0 * i as f64;
        let y = top + road_h + 45.0;
        let _ = writeln!(out, r#"<rect x="{x}" y="{}" width="14" height="10" fill="{}"/>"#, y - 9.0, color(i));
        let _ = writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 20.0, escape(name));
    }
    let _ = writeln!(
        out,
        r#"<text x="{left}" y="{}">outlines every {shadow_period} s, labelled with time [s]; x from {x_min:.1} to {x_max:.1} m</text>"#,
        top + road_h + 72.0
    );
    out.push_str("</svg>\n");
    out
}

/// One panel per barrier: value over time for every vehicle, the zero
/// level dashed. Values above `clip` are drawn at `clip`.
pub fn barrier_svg(log: &TrajectoryLog, clip: f64) -> String {
    let (width, panel_h, gap, left, top) = (900.0, 110.0, 30.0, 60.0, 40.0);
    let height = top + 7.0 * (panel_h + gap) + 40.0;
    let t_max = log.records.iter().map(|r| r.time).fold(0.0, f64::max);
    let at = Axis::new(0.0, t_max, left, width - 20.0);
    let names = log.vehicles();

    let mut out = String::new();
    header(&mut out, width, height);
    let _ = writeln!(out, r#"<text x="{left}" y="20">barrier values over time [s] (clipped at {clip})</text>"#);
    for id in BarrierId::ALL {
        let k = id.index() as f64;
        let y0 = top + k * (panel_h + gap);
        let values = log.records.iter().map(|r| r.barriers[id.index()]).filter(|v| v.is_finite());
        let lo = values.clone().fold(0.0, f64::min);
        let hi = values.fold(0.0, f64::max).min(clip).max(lo + 1e-6);
        let pad = 0.05 * (hi - lo);
        let ay = Axis::new(lo - pad, hi + pad, y0 + panel_h, y0);
        let _ = writeln!(
            out,
            r##"<rect x="{left}" y="{y0}" width="{:.2}" height="{panel_h}" fill="none" stroke="#999"/>"##,
            width - 20.0 - left
        );
        let _ = writeln!(
            out,
            r##"<line x1="{left}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#c00" stroke-dasharray="4 4"/>"##,
            ay.at(0.0),
            width - 20.0,
            ay.at(0.0)
        );
        let min = log.records.iter().map(|r| r.barriers[id.index()]).fold(f64::INFINITY, f64::min);
        let _ = writeln!(out, r#"<text x="{left}" y="{}">{} (min {:.4})</text>"#, y0 - 4.0, id.name(), min);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end" font-size="10">{:.1}</text>"#, left - 4.0, ay.at(hi), hi);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end" font-size="10">{:.1}</text>"#, left - 4.0, ay.at(lo) + 10.0, lo);
        for (i, name) in names.iter().enumerate() {
            let pts: Vec<(f64, f64)> = log
                .of(name)
                .filter(|r| r.barriers[id.index()].is_finite())
                .map(|r| (at.at(r.time), ay.at(r.barriers[id.index()].min(clip))))
                .collect();
            polyline(&mut out, &pts, color(i), r#"stroke-width="1.2""#);
        }
        x_ticks(&mut out, &at, y0 + panel_h, 10.0);
    }
    for (i, name) in names.iter().enumerate() {
        let x = left + 150.0 * i as f64;
        let y = height - 12.0;
        let _ = writeln!(out, r#"<rect x="{x}" y="{}" width="14" height="10" fill="{}"/>"#, y - 9.0, color(i));
        let _ = writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 20.0, escape(name));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::ControllerParams;
    use crate::simulator::{run, ScenarioConfig, VehicleConfig};
    use crate::vehicle::VehicleState;

    fn log() -> TrajectoryLog {
        let cfg = ScenarioConfig {
            name: "plot".into(),
            geometry: LaneGeometry::default(),
            sensor_range: 100.0,
            control_period: 0.1,
            dt: 0.01,
            horizon: 2.0,
            lane_capture: 0.3,
            controller: ControllerParams::default(),
            vehicles: vec![
                VehicleConfig {
                    name: "a<b".into(),
                    initial: VehicleState::new(0.0, 4.0, 0.0, 20.0),
                    v_ref: 20.0,
                    lane_schedule: vec![],
                },
                VehicleConfig {
                    name: "c".into(),
                    initial: VehicleState::new(40.0, 8.0, 0.0, 20.0),
                    v_ref: 20.0,
                    lane_schedule: vec![],
                },
            ],
        };
        run(&cfg).unwrap().log
    }

    #[test]
    fn trajectory_has_lanes_paths_and_shadows() {
        let svg = trajectory_svg(&log(), &LaneGeometry::default(), 1.0);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches(r#"stroke-width="1.5""#).count(), 3);
        assert_eq!(svg.matches("<polyline").count(), 2);
        // outlines at t = 0, 1, 2 for both vehicles
        assert_eq!(svg.matches("transform=\"rotate").count(), 6);
        assert!(svg.contains("a&lt;b") && !svg.contains("a<b"));
    }

    #[test]
    fn barrier_panel_per_barrier() {
        let svg = barrier_svg(&log(), 20.0);
        for id in BarrierId::ALL {
            assert!(svg.contains(&format!(">{} (min", id.name())));
        }
        assert_eq!(svg.matches("<polyline").count(), 14);
    }

    #[test]
    fn rendering_is_deterministic_and_pure() {
        let l = log();
        let before = l.clone();
        let a = trajectory_svg(&l, &LaneGeometry::default(), 0.5);
        let b = trajectory_svg(&l, &LaneGeometry::default(), 0.5);
        assert_eq!(a, b);
        assert_eq!(l, before);
    }

    #[test]
    fn tick_steps_are_round() {
        assert_eq!(tick_step(15.0, 10.0), 2.0);
        assert_eq!(tick_step(394.0, 10.0), 50.0);
        assert_eq!(tick_step(1.0, 10.0), 0.1);
    }

    #[test]
    fn empty_log_renders() {
        let svg = trajectory_svg(&TrajectoryLog::default(), &LaneGeometry::default(), 1.0);
        assert!(svg.contains("</svg>"));
        assert!(barrier_svg(&TrajectoryLog::default(), 20.0).contains("</svg>"));
    }
}

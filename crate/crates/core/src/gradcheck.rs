//! Finite-difference certification of the analytic constraint rows.
//!
//! Every row is rebuilt numerically from the barrier values (`eval_b`) and
//! `V = (y_ref - y)^2 / 2` alone: `psi1` and `eta0` are directional
//! derivatives of those scalars along the held-input flow, and row
//! coefficients are directional derivatives of `psi1`, `eta0` or `b` along
//! the flow of each decision variable. The flow model here is written out
//! independently of the certificate code.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::certificates::{BarrierId, CertificateSet, ConstraintRow, RowOrigin, SpeedTerm};
use crate::coordination::{LAMBDA_KNEE, LAMBDA_SATURATION};
use crate::error::Result;
use crate::perception::{LaneGeometry, NeighborFrame, Slot};
use crate::vehicle::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckSettings {
    pub samples: usize,
    pub seed: u64,
    /// Time step of the central differences [s].
    pub step: f64,
    pub tol: f64,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self {
            samples: 1000,
            seed: 0,
            step: 2e-4,
            tol: 1e-5,
        }
    }
}

/// One analytic/numeric pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mismatch {
    pub frame: usize,
    pub row: String,
    pub field: &'static str,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub frames: usize,
    /// Sampled frames discarded because a coordination breakpoint sat
    /// inside the difference stencil.
    pub rejected: usize,
    pub comparisons: usize,
    pub failures: usize,
    pub tol: f64,
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
    pub errors: Vec<String>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.errors.is_empty() && self.frames > 0
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradient check {}: {} frames ({} rejected), {} comparisons, {} above {:e}, max rel error {:.3e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.frames,
            self.rejected,
            self.comparisons,
            self.failures,
            self.tol,
            self.max_rel_error
        )?;
        if let Some(w) = &self.worst {
            writeln!(
                f,
                "  worst: frame {} {} {}: analytic {:.9e} numeric {:.9e}",
                w.frame, w.row, w.field, w.analytic, w.numeric
            )?;
        }
        for e in &self.errors {
            writeln!(f, "  error: {e}")?;
        }
        Ok(())
    }
}

/// Rows under test: seven barrier rows then the Lyapunov row.
pub type RowSource<'a> = dyn Fn(&CertificateSet, &NeighborFrame, f64) -> Result<Vec<ConstraintRow>> + 'a;

pub fn analytic_rows(certs: &CertificateSet, frame: &NeighborFrame, y_ref: f64) -> Result<Vec<ConstraintRow>> {
    let mut rows: Vec<ConstraintRow> = certs.barrier_rows(frame)?.iter().map(|b| b.row).collect();
    rows.push(certs.lyapunov_row(frame, y_ref).row);
    Ok(rows)
}

/// Per-vehicle `(dx, dy, dpsi, dv_held)`; index 0 is the ego, then slots.
type Flow = [[f64; 4]; 7];

fn vehicles(frame: &NeighborFrame) -> [VehicleState; 7] {
    let mut out = [frame.ego; 7];
    for (k, n) in frame.slots.iter().enumerate() {
        out[k + 1] = n.state;
    }
    out
}

fn displaced(frame: &NeighborFrame, dir: &Flow, h: f64) -> NeighborFrame {
    let mut f = frame.clone();
    let mv = |s: &mut VehicleState, d: &[f64; 4]| {
        s.x += h * d[0];
        s.y += h * d[1];
        s.psi += h * d[2];
        s.v_applied += h * d[3];
    };
    mv(&mut f.ego, &dir[0]);
    for (k, n) in f.slots.iter_mut().enumerate() {
        mv(&mut n.state, &dir[k + 1]);
    }
    f
}

/// Neighbors cruise at their measured speed and heading.
fn traffic(frame: &NeighborFrame) -> Flow {
    let mut d = [[0.0; 4]; 7];
    for (k, s) in vehicles(frame).iter().enumerate().skip(1) {
        d[k] = [s.v_applied * s.psi.cos(), s.v_applied * s.psi.sin(), 0.0, 0.0];
    }
    d
}

/// Everything moving with the inputs the ego is holding.
fn held_flow(frame: &NeighborFrame) -> Flow {
    let mut d = traffic(frame);
    let e = &frame.ego;
    d[0] = [e.v_applied * e.psi.cos(), e.v_applied * e.psi.sin(), e.omega_applied, 0.0];
    d
}

/// Input-free part of the closed flow.
fn drift(frame: &NeighborFrame, lag: Option<f64>) -> Flow {
    let mut d = traffic(frame);
    d[0] = [0.0, 0.0, 0.0, lag.map_or(0.0, |t| -frame.ego.v_applied / t)];
    d
}

fn along_v(frame: &NeighborFrame, lag: Option<f64>) -> Flow {
    let mut d = [[0.0; 4]; 7];
    d[0] = [frame.ego.psi.cos(), frame.ego.psi.sin(), 0.0, lag.map_or(0.0, |t| 1.0 / t)];
    d
}

fn along_omega() -> Flow {
    let mut d = [[0.0; 4]; 7];
    d[0][2] = 1.0;
    d
}

/// Fourth-order central difference of `phi` along `dir`.
fn directional<F>(phi: &F, frame: &NeighborFrame, dir: &Flow, h: f64) -> Result<f64>
where
    F: Fn(&NeighborFrame) -> Result<f64>,
{
    let g = |s: f64| phi(&displaced(frame, dir, s * h));
    Ok((-g(2.0)? + 8.0 * g(1.0)? - 8.0 * g(-1.0)? + g(-2.0)?) / (12.0 * h))
}

/// Numeric row of `phi` for `phi_dot(u) + gain * phi (+ delta) >= 0`.
fn numeric_row<F>(phi: &F, frame: &NeighborFrame, lag: Option<f64>, gain: f64, h: f64, origin: RowOrigin) -> Result<(f64, ConstraintRow)>
where
    F: Fn(&NeighborFrame) -> Result<f64>,
{
    let value = phi(frame)?;
    let a_v = directional(phi, frame, &along_v(frame, lag), h)?;
    let a_omega = directional(phi, frame, &along_omega(), h)?;
    let d0 = directional(phi, frame, &drift(frame, lag), h)?;
    Ok((
        value,
        ConstraintRow {
            a_v,
            a_omega,
            a_delta_omega: if origin == RowOrigin::Lyapunov { 1.0 } else { 0.0 },
            rhs: -(d0 + gain * value),
            origin,
        },
    ))
}

/// Numeric counterpart of [`analytic_rows`], plus the numeric `psi1`
/// (second-order barriers) and `eta0`.
pub struct NumericRows {
    pub rows: Vec<ConstraintRow>,
    pub psi1: [Option<f64>; 7],
    pub eta0: f64,
}

pub fn numeric_rows(certs: &CertificateSet, frame: &NeighborFrame, y_ref: f64, h: f64) -> Result<NumericRows> {
    let lag = match certs.speed_term {
        SpeedTerm::Frozen => None,
        SpeedTerm::Lagged { period } => Some(period),
    };
    let k1 = certs.gains.gamma1_gain;
    let k2 = certs.gains.gamma2_gain;
    let mut rows = Vec::with_capacity(8);
    let mut psi1 = [None; 7];
    for id in BarrierId::ALL {
        let b = |f: &NeighborFrame| certs.eval_b(id, f);
        let origin = RowOrigin::Barrier(id);
        let row = if id.relative_degree() == 1 {
            numeric_row(&b, frame, lag, k1, h, origin)?.1
        } else {
            let p = |f: &NeighborFrame| Ok(directional(&b, f, &held_flow(f), h)? + k1 * b(f)?);
            let (value, row) = numeric_row(&p, frame, lag, k2, h, origin)?;
            psi1[id.index()] = Some(value);
            row
        };
        rows.push(row);
    }
    let c = certs.gains.alpha_gain;
    let v = |f: &NeighborFrame| Ok(0.5 * (y_ref - f.ego.y).powi(2));
    let eta = |f: &NeighborFrame| Ok(-directional(&v, f, &held_flow(f), h)? - c * v(f)?);
    let (eta0, row) = numeric_row(&eta, frame, None, certs.gains.mu1_gain, h, RowOrigin::Lyapunov)?;
    rows.push(row);
    Ok(NumericRows { rows, psi1, eta0 })
}

/// `|a - b| / max(|a|, |b|, 1)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d.is_nan() {
        return f64::INFINITY;
    }
    d / a.abs().max(b.abs()).max(1.0)
}

/// Gaps of the four lateral barriers in safety distances.
fn thetas(certs: &CertificateSet, frame: &NeighborFrame) -> [f64; 4] {
    let tau = certs.coord.tau_d;
    let fl = |v: f64| v.max(certs.speed_floor);
    let ego = &frame.ego;
    let back = |s: Slot| {
        let n = &frame.get(s).state;
        (ego.x - n.x) / (tau * fl(n.v_applied))
    };
    let front = |s: Slot| (frame.get(s).state.x - ego.x) / (tau * fl(ego.v_applied));
    [back(Slot::RightBack), front(Slot::RightFront), back(Slot::LeftBack), front(Slot::LeftFront)]
}

fn near_breakpoint(theta: f64) -> bool {
    (theta - LAMBDA_KNEE).abs() < 0.02 || (theta > LAMBDA_SATURATION - 0.02 && theta < LAMBDA_SATURATION + 0.03)
}

/// Random frame on `geometry`, with a random target lane. `None` when a
/// lateral gap lands near a breakpoint of `lambda`.
pub fn random_frame<R: Rng>(rng: &mut R, certs: &CertificateSet, v_mock: f64, sensor_range: f64) -> Option<(NeighborFrame, f64)> {
    let g = &certs.geometry;
    let w = g.lane_width;
    let lane = rng.gen_range(1..=g.lane_count);
    let mut ego = VehicleState::new(
        0.0,
        g.center(lane) + rng.gen_range(-0.45..0.45) * w,
        rng.gen_range(-0.3..0.3),
        rng.gen_range(5.0..30.0),
    );
    ego.omega_applied = rng.gen_range(-0.5..0.5);
    let mut frame = NeighborFrame::all_mock(ego, lane, g, sensor_range, v_mock);
    for slot in Slot::ALL {
        let l = lane + slot.lane_offset();
        if l < 1 || l > g.lane_count || !rng.gen_bool(0.7) {
            continue;
        }
        let gap = rng.gen_range(1.0..90.0);
        let n = frame.get_mut(slot);
        n.is_mock = false;
        n.state = VehicleState::new(
            if slot.is_front() { gap } else { -gap },
            g.center(l) + rng.gen_range(-0.3..0.3) * w,
            rng.gen_range(-0.2..0.2),
            rng.gen_range(5.0..30.0),
        );
    }
    let y_ref = g.center(rng.gen_range(1..=g.lane_count));
    if thetas(certs, &frame).iter().any(|t| near_breakpoint(*t)) {
        return None;
    }
    Some((frame, y_ref))
}

/// Three-lane road used for certification, so every slot can be occupied.
pub fn certification_geometry() -> LaneGeometry {
    LaneGeometry {
        lane_count: 3,
        ..LaneGeometry::default()
    }
}

pub fn run(certs: &CertificateSet, settings: &GradcheckSettings) -> GradcheckReport {
    run_with(certs, settings, &analytic_rows)
}

/// Certify rows from `source` against the numeric oracle.
pub fn run_with(certs: &CertificateSet, settings: &GradcheckSettings, source: &RowSource) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut report = GradcheckReport {
        frames: 0,
        rejected: 0,
        comparisons: 0,
        failures: 0,
        tol: settings.tol,
        max_rel_error: 0.0,
        worst: None,
        errors: Vec::new(),
    };
    while report.frames < settings.samples {
        let Some((frame, y_ref)) = random_frame(&mut rng, certs, 30.0, 100.0) else {
            report.rejected += 1;
            continue;
        };
        let index = report.frames;
        report.frames += 1;
        let analytic = source(certs, &frame, y_ref);
        let numeric = numeric_rows(certs, &frame, y_ref, settings.step);
        let (analytic, numeric) = match (analytic, numeric) {
            (Ok(a), Ok(n)) => (a, n),
            (a, n) => {
                let msg = a.err().or(n.err()).map(|e| e.to_string()).unwrap_or_default();
                report.errors.push(format!("frame {index}: {msg}"));
                continue;
            }
        };
        if analytic.len() != numeric.rows.len() {
            report.errors.push(format!("frame {index}: {} rows, expected {}", analytic.len(), numeric.rows.len()));
            continue;
        }
        let mut pairs: Vec<(String, &'static str, f64, f64)> = Vec::new();
        for (a, n) in analytic.iter().zip(&numeric.rows) {
            let name = match n.origin {
                RowOrigin::Barrier(id) => id.name().to_string(),
                RowOrigin::Lyapunov => "lyapunov".to_string(),
            };
            pairs.push((name.clone(), "a_v", a.a_v, n.a_v));
            pairs.push((name.clone(), "a_omega", a.a_omega, n.a_omega));
            pairs.push((name.clone(), "a_delta_omega", a.a_delta_omega, n.a_delta_omega));
            pairs.push((name, "rhs", a.rhs, n.rhs));
        }
        if let Ok(evals) = certs.barrier_rows(&frame) {
            for e in &evals {
                if let (Some(a), Some(n)) = (e.psi1, numeric.psi1[e.id.index()]) {
                    pairs.push((e.id.name().to_string(), "psi1", a, n));
                }
            }
        }
        pairs.push(("lyapunov".into(), "eta0", certs.lyapunov_row(&frame, y_ref).eta0, numeric.eta0));

        for (row, field, a, n) in pairs {
            let err = rel_error(a, n);
            report.comparisons += 1;
            if err > settings.tol {
                report.failures += 1;
            }
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(Mismatch {
                    frame: index,
                    row,
                    field,
                    analytic: a,
                    numeric: n,
                    rel_error: err,
                });
            }
        }
    }
    report
}

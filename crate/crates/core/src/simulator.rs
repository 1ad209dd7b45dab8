//! Synchronous multi-vehicle simulation.
//!
//! Every control period each vehicle classifies the others from the shared
//! snapshot, solves its own QP, and then all vehicles integrate their held
//! inputs together.

use std::collections::HashSet;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::certificates::BarrierId;
use crate::controller::{control_step, ControllerParams, References};
use crate::error::{Error, Result};
use crate::perception::{classify, lane_of, track_lane, LaneGeometry, NeighborFrame, Observed};
use crate::qp::QpStatus;
use crate::vehicle::{step, ControlInput, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneCommand {
    pub time: f64,
    pub lane: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleConfig {
    pub name: String,
    pub initial: VehicleState,
    pub v_ref: f64,
    #[serde(default)]
    pub lane_schedule: Vec<LaneCommand>,
}

impl VehicleConfig {
    /// Commanded lane at time `t`; before the first command, the lane the
    /// vehicle starts in.
    pub fn lane_at(&self, t: f64, geometry: &LaneGeometry) -> i32 {
        self.lane_schedule
            .iter()
            .take_while(|c| c.time <= t)
            .last()
            .map_or_else(|| lane_of(self.initial.y, geometry), |c| c.lane)
    }
}

fn default_sensor_range() -> f64 {
    100.0
}
fn default_control_period() -> f64 {
    0.1
}
fn default_dt() -> f64 {
    0.01
}
fn default_lane_capture() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub geometry: LaneGeometry,
    #[serde(default = "default_sensor_range")]
    pub sensor_range: f64,
    #[serde(default = "default_control_period")]
    pub control_period: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub horizon: f64,
    /// Fraction of a lane width around a lane center inside which a vehicle
    /// is re-assigned to that lane.
    #[serde(default = "default_lane_capture")]
    pub lane_capture: f64,
    #[serde(default)]
    pub controller: ControllerParams,
    pub vehicles: Vec<VehicleConfig>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Integrator sub-steps per control period.
    pub fn substeps(&self) -> Result<usize> {
        let ratio = self.control_period / self.dt;
        let n = ratio.round();
        if !(n >= 1.0) || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidScenario(format!(
                "dt = {} does not divide control_period = {}",
                self.dt, self.control_period
            )));
        }
        Ok(n as usize)
    }

    /// Controller parameters with the scenario's control period.
    pub fn controller_params(&self) -> ControllerParams {
        ControllerParams {
            control_period: self.control_period,
            ..self.controller
        }
    }

    pub fn control_steps(&self) -> usize {
        (self.horizon / self.control_period).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        self.geometry.validate()?;
        for (name, v) in [
            ("sensor_range", self.sensor_range),
            ("control_period", self.control_period),
            ("dt", self.dt),
            ("horizon", self.horizon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        self.substeps()?;
        self.controller_params().validate()?;
        if !(self.lane_capture > 0.0 && self.lane_capture <= 0.5) {
            return bad(format!("lane_capture must lie in (0, 0.5], got {}", self.lane_capture));
        }
        if self.vehicles.is_empty() {
            return bad("scenario has no vehicles".into());
        }
        let mut names = HashSet::new();
        let b = &self.controller.bounds;
        for v in &self.vehicles {
            if !names.insert(v.name.as_str()) {
                return bad(format!("duplicate vehicle name {:?}", v.name));
            }
            if !v.initial.is_finite() || !v.initial.heading_ok() {
                return bad(format!("vehicle {:?}: initial state must be finite with heading in (-pi/2, pi/2)", v.name));
            }
            if !(v.v_ref >= b.v_min && v.v_ref <= b.v_max) {
                return bad(format!("vehicle {:?}: v_ref {} outside [{}, {}]", v.name, v.v_ref, b.v_min, b.v_max));
            }
            let mut last = f64::NEG_INFINITY;
            for c in &v.lane_schedule {
                if !(c.time >= 0.0) || c.time < last {
                    return bad(format!("vehicle {:?}: lane schedule times must be non-negative and sorted", v.name));
                }
                if c.lane < 1 || c.lane > self.geometry.lane_count {
                    return bad(format!("vehicle {:?}: lane {} does not exist", v.name, c.lane));
                }
                last = c.time;
            }
        }
        self.check_initially_safe()
    }

    fn check_initially_safe(&self) -> Result<()> {
        let states: Vec<VehicleState> = self.vehicles.iter().map(|v| v.initial).collect();
        let mut lanes = vec![vec![None; states.len()]; states.len()];
        let certs = self.controller_params().certificates(&self.geometry);
        for i in 0..states.len() {
            let frame = perceive(self, i, &states, &mut lanes[i]);
            let values = certs.eval_all(&frame)?;
            for id in BarrierId::ALL {
                if values[id.index()] < 0.0 {
                    return Err(Error::InvalidScenario(format!(
                        "initially unsafe: vehicle {:?} has {} = {:.4}",
                        self.vehicles[i].name,
                        id.name(),
                        values[id.index()]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Frame of vehicle `i`, updating its lane beliefs about every vehicle.
fn perceive(cfg: &ScenarioConfig, i: usize, states: &[VehicleState], lanes: &mut [Option<i32>]) -> NeighborFrame {
    for (j, s) in states.iter().enumerate() {
        lanes[j] = Some(track_lane(lanes[j], s.y, &cfg.geometry, cfg.lane_capture));
    }
    let others: Vec<Observed> = states
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(j, s)| Observed {
            state: *s,
            lane: lanes[j].expect("lane assigned above"),
            id: Some(j),
        })
        .collect();
    let ego_lane = lanes[i].expect("lane assigned above");
    classify(
        &states[i],
        ego_lane,
        &others,
        &cfg.geometry,
        cfg.sensor_range,
        cfg.controller.v_mock,
    )
}

/// One vehicle at one control instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub step: usize,
    pub time: f64,
    pub vehicle: String,
    pub state: VehicleState,
    pub lane: i32,
    pub v_ref: f64,
    pub y_ref: f64,
    pub input: ControlInput,
    pub barriers: [f64; 7],
    pub lyapunov: f64,
    pub delta_v: f64,
    pub delta_omega: f64,
    pub status: QpStatus,
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub records: Vec<Record>,
}

impl TrajectoryLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: Record = serde_json::from_str(line)
                .map_err(|e| Error::InvalidArgument(format!("log line {}: {e}", n + 1)))?;
            records.push(r);
        }
        Ok(Self { records })
    }

    pub fn vehicles(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for r in &self.records {
            if !seen.contains(&r.vehicle) {
                seen.push(r.vehicle.clone());
            }
        }
        seen
    }

    pub fn of(&self, vehicle: &str) -> impl Iterator<Item = &Record> + '_ {
        let name = vehicle.to_string();
        self.records.iter().filter(move |r| r.vehicle == name)
    }

    pub fn last_of(&self, vehicle: &str) -> Option<&Record> {
        self.records.iter().rev().find(|r| r.vehicle == vehicle)
    }
}

/// Wall-clock statistics, kept out of the log.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RunStats {
    pub control_steps: usize,
    pub mean_step_seconds: f64,
    pub max_step_seconds: f64,
    pub fallbacks: usize,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub log: TrajectoryLog,
    pub stats: RunStats,
}

pub fn run(cfg: &ScenarioConfig) -> Result<SimulationResult> {
    cfg.validate()?;
    let substeps = cfg.substeps()?;
    let n = cfg.vehicles.len();
    let mut states: Vec<VehicleState> = cfg.vehicles.iter().map(|v| v.initial).collect();
    let mut lanes: Vec<Vec<Option<i32>>> = vec![vec![None; n]; n];
    let mut log = TrajectoryLog::default();
    let mut stats = RunStats::default();
    let mut total = 0.0;
    let params = cfg.controller_params();

    for k in 0..=cfg.control_steps() {
        let t = k as f64 * cfg.control_period;
        let mut inputs = Vec::with_capacity(n);
        for i in 0..n {
            let vc = &cfg.vehicles[i];
            let frame = perceive(cfg, i, &states, &mut lanes[i]);
            let refs = References {
                v_ref: vc.v_ref,
                y_ref: cfg.geometry.center(vc.lane_at(t, &cfg.geometry)),
            };
            let started = Instant::now();
            let out = control_step(&frame, refs, &cfg.geometry, &params);
            let elapsed = started.elapsed().as_secs_f64();
            total += elapsed;
            stats.max_step_seconds = stats.max_step_seconds.max(elapsed);
            stats.control_steps += 1;
            if out.diagnostics.fallback {
                stats.fallbacks += 1;
            }
            let d = out.diagnostics;
            log.records.push(Record {
                step: k,
                time: t,
                vehicle: vc.name.clone(),
                state: states[i],
                lane: frame.ego_lane,
                v_ref: refs.v_ref,
                y_ref: refs.y_ref,
                input: out.input,
                barriers: d.barriers,
                lyapunov: d.lyapunov,
                delta_v: d.delta_v,
                delta_omega: d.delta_omega,
                status: d.status,
                fallback: d.fallback,
                event: d.event,
            });
            inputs.push(out.input);
        }
        if k == cfg.control_steps() {
            break;
        }
        for (i, s) in states.iter_mut().enumerate() {
            for _ in 0..substeps {
                *s = step(s, &inputs[i], cfg.dt)?;
            }
            if !s.heading_ok() {
                return Err(Error::HeadingOutOfRange {
                    vehicle: cfg.vehicles[i].name.clone(),
                    psi: s.psi,
                });
            }
        }
    }
    stats.mean_step_seconds = total / stats.control_steps.max(1) as f64;
    Ok(SimulationResult { log, stats })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extremum {
    pub barrier: String,
    pub value: f64,
    pub step: usize,
    pub time: f64,
    pub vehicle: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub tol: f64,
    pub passed: bool,
    /// Minimum of each barrier over the whole log; `None` for an empty log.
    pub minima: Vec<Option<Extremum>>,
    /// First few records that break the tolerance.
    pub violations: Vec<Extremum>,
    pub violation_count: usize,
}

impl InvarianceReport {
    pub fn worst(&self) -> Option<&Extremum> {
        self.minima
            .iter()
            .flatten()
            .min_by(|a, b| a.value.total_cmp(&b.value))
    }
}

impl fmt::Display for InvarianceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invariance {} (tol {:e})", if self.passed { "PASS" } else { "FAIL" }, self.tol)?;
        for m in self.minima.iter().flatten() {
            writeln!(f, "  min {} = {:.6} at t = {:.2} ({})", m.barrier, m.value, m.time, m.vehicle)?;
        }
        for v in &self.violations {
            writeln!(f, "  violation: {} = {:.6} at step {} t = {:.2} vehicle {}", v.barrier, v.value, v.step, v.time, v.vehicle)?;
        }
        Ok(())
    }
}

/// Minimum of every logged barrier; passes iff all stay at or above `-tol`.
/// A missing (`NaN`) barrier value counts as a violation.
pub fn check_invariance(log: &TrajectoryLog, tol: f64) -> InvarianceReport {
    let mut minima: Vec<Option<Extremum>> = vec![None; 7];
    let mut violations = Vec::new();
    let mut violation_count = 0;
    for r in &log.records {
        for id in BarrierId::ALL {
            let value = r.barriers[id.index()];
            let ext = || Extremum {
                barrier: id.name().to_string(),
                value,
                step: r.step,
                time: r.time,
                vehicle: r.vehicle.clone(),
            };
            let slot = &mut minima[id.index()];
            if value.is_nan() || slot.as_ref().is_none_or(|m| value < m.value) {
                *slot = Some(ext());
            }
            if !(value >= -tol) {
                violation_count += 1;
                if violations.len() < 10 {
                    violations.push(ext());
                }
            }
        }
    }
    InvarianceReport {
        tol,
        passed: violation_count == 0,
        minima,
        violations,
        violation_count,
    }
}

/// First control step after `after` at which `V` grows by more than
/// `v_tol` although the slack was (numerically) unused.
pub fn lyapunov_increase(log: &TrajectoryLog, vehicle: &str, after: f64, slack_tol: f64, v_tol: f64) -> Option<(f64, f64, f64)> {
    let recs: Vec<&Record> = log.of(vehicle).filter(|r| r.time >= after).collect();
    recs.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        (a.delta_omega.abs() <= slack_tol && b.lyapunov > a.lyapunov + v_tol).then_some((a.time, a.lyapunov, b.lyapunov))
    })
}

//! Run summaries written next to the trajectory log.

use std::fmt::Write;

use serde::Serialize;

use lane_cbf::qp::QpStatus;
use lane_cbf::simulator::{check_invariance, Extremum, RunStats, TrajectoryLog};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tracking {
    pub vehicle: String,
    pub final_speed_error: f64,
    pub final_lateral_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub invariance: &'static str,
    pub invariance_tol: f64,
    pub min_barrier: Option<Extremum>,
    pub violation_count: usize,
    pub tracking: Vec<Tracking>,
    pub fallbacks: usize,
    /// Control steps whose QP ended infeasible or at the iteration limit.
    pub solver_failures: usize,
    pub mean_step_seconds: f64,
    pub max_step_seconds: f64,
}

impl RunReport {
    pub fn new(scenario: &str, log: &TrajectoryLog, stats: &RunStats, tol: f64) -> Self {
        let inv = check_invariance(log, tol);
        let tracking = log
            .vehicles()
            .into_iter()
            .filter_map(|v| {
                let r = log.last_of(&v)?;
                Some(Tracking {
                    final_speed_error: r.state.v_applied - r.v_ref,
                    final_lateral_error: r.state.y - r.y_ref,
                    vehicle: v,
                })
            })
            .collect();
        let solver_failures = log
            .records
            .iter()
            .filter(|r| matches!(r.status, QpStatus::Infeasible | QpStatus::MaxIter))
            .count();
        Self {
            scenario: scenario.to_string(),
            invariance: if inv.passed { "PASS" } else { "FAIL" },
            invariance_tol: tol,
            min_barrier: inv.worst().cloned(),
            violation_count: inv.violation_count,
            tracking,
            fallbacks: stats.fallbacks,
            solver_failures,
            mean_step_seconds: stats.mean_step_seconds,
            max_step_seconds: stats.max_step_seconds,
        }
    }

    pub fn passed(&self) -> bool {
        self.invariance == "PASS" && self.solver_failures == 0
    }
}

/// One row per control step: `time` then `x, y, v, min_b` per vehicle.
pub fn summary_csv(log: &TrajectoryLog) -> String {
    let names = log.vehicles();
    let mut out = String::from("time");
    for n in &names {
        let _ = write!(out, ",{n}_x,{n}_y,{n}_v,{n}_min_b");
    }
    out.push('\n');
    let steps = log.records.iter().map(|r| r.step).max().map_or(0, |s| s + 1);
    let mut rows: Vec<Vec<Option<String>>> = vec![vec![None; names.len()]; steps];
    let mut times = vec![f64::NAN; steps];
    for r in &log.records {
        let Some(i) = names.iter().position(|n| *n == r.vehicle) else { continue };
        let min_b = r.barriers.iter().copied().fold(f64::INFINITY, f64::min);
        times[r.step] = r.time;
        rows[r.step][i] = Some(format!("{},{},{},{}", r.state.x, r.state.y, r.state.v_applied, min_b));
    }
    for (k, row) in rows.iter().enumerate() {
        if times[k].is_nan() {
            continue;
        }
        let _ = write!(out, "{}", times[k]);
        for cell in row {
            out.push(',');
            out.push_str(cell.as_deref().unwrap_or(",,,"));
        }
        out.push('\n');
    }
    out
}

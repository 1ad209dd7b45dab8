//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lane_cbf::certificates::{BarrierId, CertificateSet, ConstraintRow, RowOrigin, SpeedTerm};
use lane_cbf::controller::ControllerParams;
use lane_cbf::coordination::{self, CoordinationConfig};
use lane_cbf::gradcheck::{self, GradcheckSettings};
use lane_cbf::perception::{LaneGeometry, NeighborFrame, Slot};
use lane_cbf::qp::{self, InputBounds, QpProblem, QpStatus, QpWeights};
use lane_cbf::simulator::{self, ScenarioConfig, SimulationResult};
use lane_cbf::vehicle::VehicleState;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scenario(name: &str) -> ScenarioConfig {
    let path = format!("{}/../../scenarios/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    ScenarioConfig::from_json(&text).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn simulate(cfg: &ScenarioConfig) -> SimulationResult {
    simulator::run(cfg).unwrap_or_else(|e| panic!("{}: {e}", cfg.name))
}

fn coordination_axioms() -> Outcome {
    let start = Instant::now();
    let report = coordination::validate(&CoordinationConfig::default());
    let secs = start.elapsed().as_secs_f64();
    let warnings: Vec<String> = report.warnings().map(|c| c.name.to_string()).collect();
    outcome(
        report.passed() && secs < 1.0,
        format!("all checks passed: {}, warnings {:?}, {:.3} s", report.passed(), warnings, secs),
    )
}

fn finite_differences() -> Outcome {
    let start = Instant::now();
    let geometry = gradcheck::certification_geometry();
    let lagged = ControllerParams::default().certificates(&geometry);
    let frozen = CertificateSet {
        speed_term: SpeedTerm::Frozen,
        ..lagged
    };
    let settings = GradcheckSettings::default();
    let a = gradcheck::run(&lagged, &settings);
    let b = gradcheck::run(&frozen, &GradcheckSettings { seed: 1, ..settings });
    let secs = start.elapsed().as_secs_f64();
    outcome(
        a.passed() && b.passed() && a.frames >= 1000 && b.frames >= 1000 && secs < 10.0,
        format!(
            "lagged {} frames max rel err {:.2e}, frozen {} frames max rel err {:.2e}, tol {:e}, {:.2} s",
            a.frames, a.max_rel_error, b.frames, b.max_rel_error, settings.tol, secs
        ),
    )
}

/// Seven hard rows satisfied at a random interior input plus a Lyapunov row.
fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let log_uniform = |r: &mut ChaCha8Rng| 10f64.powf(r.gen_range(-1.0..1.0));
    let weights = QpWeights {
        h_v: log_uniform(rng),
        h_omega: log_uniform(rng),
        p_v: log_uniform(rng),
        p_omega: log_uniform(rng),
    };
    let bounds = InputBounds::default();
    let v0 = rng.gen_range(bounds.v_min..bounds.v_max);
    let w0 = rng.gen_range(bounds.omega_min..bounds.omega_max);
    let mut rows = Vec::with_capacity(8);
    for id in BarrierId::ALL {
        let a_v = rng.gen_range(-1.0..1.0);
        let a_omega = rng.gen_range(-20.0..20.0);
        rows.push(ConstraintRow {
            a_v,
            a_omega,
            a_delta_omega: 0.0,
            rhs: a_v * v0 + a_omega * w0 - rng.gen_range(0.0..5.0),
            origin: RowOrigin::Barrier(id),
        });
    }
    rows.push(ConstraintRow {
        a_v: rng.gen_range(-1.0..1.0),
        a_omega: rng.gen_range(-20.0..20.0),
        a_delta_omega: 1.0,
        rhs: rng.gen_range(-5.0..5.0),
        origin: RowOrigin::Lyapunov,
    });
    QpProblem {
        weights,
        bounds,
        v_ref: rng.gen_range(bounds.v_min..bounds.v_max),
        rows,
    }
}

fn qp_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut within, mut kkt_ok, mut optimal, mut solver_not_worse) = (0, 0, 0, 0);
    let (mut worst_rel, mut worst_kkt): (f64, f64) = (0.0, 0.0);
    let n = 100;
    for _ in 0..n {
        let problem = random_qp(&mut rng);
        let s = qp::solve(&problem);
        let Some(o) = qp::brute_force_oracle(&problem, 1001) else { continue };
        if s.status != QpStatus::Optimal {
            continue;
        }
        optimal += 1;
        let rel = (s.objective - o.objective).abs() / o.objective.abs().max(f64::MIN_POSITIVE);
        worst_rel = worst_rel.max(rel);
        within += usize::from(rel <= 1e-4);
        solver_not_worse += usize::from(s.objective <= o.objective * (1.0 + 1e-12));
        worst_kkt = worst_kkt.max(s.kkt_residual);
        kkt_ok += usize::from(s.kkt_residual <= 1e-8);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        optimal == n && within == n && kkt_ok == n && secs < 60.0,
        format!(
            "{optimal}/{n} optimal, {within}/{n} within 1e-4 of the grid (worst {worst_rel:.2e}), \
             solver at or below grid {solver_not_worse}/{n}, KKT <= 1e-8 {kkt_ok}/{n} (worst {worst_kkt:.1e}), {secs:.1} s"
        ),
    )
}

fn lane_freedom() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let geometry = LaneGeometry {
        lane_count: 3,
        ..LaneGeometry::default()
    };
    let certs = ControllerParams::default().certificates(&geometry);
    let lateral = [BarrierId::B2, BarrierId::B3, BarrierId::B4, BarrierId::B5];
    let (mut violations, mut worst) = (0, f64::INFINITY);
    for _ in 0..10_000 {
        let lane = rng.gen_range(1..=geometry.lane_count);
        let ego = VehicleState::new(
            rng.gen_range(-50.0..50.0),
            rng.gen_range(geometry.y_min(lane)..=geometry.y_max(lane)),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(0.0..30.0),
        );
        let mut frame = NeighborFrame::all_mock(ego, lane, &geometry, 100.0, 30.0);
        for slot in Slot::ALL {
            if rng.gen_bool(0.2) {
                continue;
            }
            let gap = rng.gen_range(0.0..100.0);
            let n = frame.get_mut(slot);
            n.is_mock = false;
            n.state = VehicleState::new(
                ego.x + if slot.is_front() { gap } else { -gap },
                geometry.center(lane + slot.lane_offset()) + rng.gen_range(-0.5..0.5) * geometry.lane_width,
                rng.gen_range(-0.5..0.5),
                rng.gen_range(0.0..30.0),
            );
        }
        for id in lateral {
            let b = certs.eval_b(id, &frame).unwrap_or(f64::NEG_INFINITY);
            worst = worst.min(b);
            violations += usize::from(b < 0.0);
        }
    }
    outcome(violations == 0, format!("10000 configurations, {violations} violations, min b2..b5 {worst:.4}"))
}

fn acc_follow() -> Outcome {
    let cfg = scenario("scenario1.json");
    let res = simulate(&cfg);
    let ego = res.log.last_of("ego").expect("ego");
    let lead = res.log.last_of("lead").expect("lead");
    let target = ego.v_ref.min(lead.state.v_applied);
    let speed_err = (ego.input.v - target).abs();
    let min_b1 = res
        .log
        .of("ego")
        .map(|r| r.barriers[BarrierId::B1.index()])
        .fold(f64::INFINITY, f64::min);
    outcome(
        speed_err < 0.02 * ego.v_ref && min_b1 >= -1e-3,
        format!("final speed {:.4} vs {:.4} (err {:.2e}), min b1 {:.2e}", ego.input.v, target, speed_err, min_b1),
    )
}

fn command_time(cfg: &ScenarioConfig, vehicle: &str) -> f64 {
    cfg.vehicles
        .iter()
        .find(|v| v.name == vehicle)
        .and_then(|v| v.lane_schedule.first())
        .map(|c| c.time)
        .expect("commanded vehicle")
}

fn lane_switch() -> Outcome {
    let cfg = scenario("scenario2.json");
    let res = simulate(&cfg);
    let w = cfg.geometry.lane_width;
    let ego = res.log.last_of("ego").expect("ego");
    let lateral = (ego.state.y - ego.y_ref).abs();
    let inv = simulator::check_invariance(&res.log, 1e-3);
    let increase = simulator::lyapunov_increase(&res.log, "ego", command_time(&cfg, "ego"), 1e-9, 1e-9);
    let worst = inv.worst().map(|e| format!("{} {:.2e}", e.barrier, e.value)).unwrap_or_default();
    outcome(
        lateral < 0.05 * w && inv.passed && increase.is_none(),
        format!(
            "final |y - y_ref| {lateral:.4} (< {:.2}), min barrier {worst}, V increase with zero slack: {}",
            0.05 * w,
            increase.map_or("none".into(), |(t, a, b)| format!("t {t:.1}: {a:.3e} -> {b:.3e}"))
        ),
    )
}

fn gap_opening() -> Outcome {
    let cfg = scenario("scenario3.json");
    let res = simulate(&cfg);
    let inv = simulator::check_invariance(&res.log, 1e-3);
    let commanded: Vec<&str> = cfg
        .vehicles
        .iter()
        .filter(|v| !v.lane_schedule.is_empty())
        .map(|v| v.name.as_str())
        .collect();
    let w = cfg.geometry.lane_width;
    let done = commanded.iter().all(|name| {
        let last = res.log.last_of(name).expect("vehicle");
        (last.state.y - last.y_ref).abs() < 0.05 * w
    });
    let worst = inv.worst().map(|e| format!("{} {:.2e} ({})", e.barrier, e.value, e.vehicle)).unwrap_or_default();
    outcome(
        inv.passed && done && !commanded.is_empty(),
        format!(
            "min barrier {worst}, violations {}, {:?} switched: {done}, fallbacks {}",
            inv.violation_count, commanded, res.stats.fallbacks
        ),
    )
}

fn timing() -> Outcome {
    let res = simulate(&scenario("scenario2.json"));
    let mean = res.stats.mean_step_seconds;
    outcome(
        mean < 5e-3,
        format!("mean control_step {:.2} us over {} calls, max {:.2} us", mean * 1e6, res.stats.control_steps, res.stats.max_step_seconds * 1e6),
    )
}

fn determinism() -> Outcome {
    let cfg = scenario("scenario2.json");
    let a = simulate(&cfg).log.to_jsonl();
    let b = simulate(&cfg).log.to_jsonl();
    outcome(a == b, format!("{} bytes, identical: {}", a.len(), a == b))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("coordination axioms", coordination_axioms),
        ("finite-difference certification", finite_differences),
        ("QP oracle equivalence", qp_oracle),
        ("lane freedom", lane_freedom),
        ("scenario 1 adaptive cruise control", acc_follow),
        ("scenario 2 lane switch", lane_switch),
        ("scenario 3 gap opening", gap_opening),
        ("control step timing", timing),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.pass);
        println!("criterion {} {name}: {} ({})", k + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

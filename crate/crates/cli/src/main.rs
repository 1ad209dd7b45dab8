//! `lane-cbf`: run scenarios, validate coordination parameters, certify
//! constraint rows and render logs.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or configuration error.

mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use lane_cbf::certificates::{BarrierId, CertificateSet, ConstraintRow};
use lane_cbf::controller::ControllerParams;
use lane_cbf::coordination::{self, CoordinationConfig};
use lane_cbf::gradcheck::{self, GradcheckSettings};
use lane_cbf::perception::{LaneGeometry, NeighborFrame};
use lane_cbf::plot;
use lane_cbf::simulator::{self, ScenarioConfig, TrajectoryLog};

use report::{summary_csv, RunReport};

const CHECK_FAILED: u8 = 1;
const USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "lane-cbf", version, about = "Lane keeping and lane changing with CLF-CBF quadratic programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write log, summary, report and plots.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Barrier tolerance of the invariance check.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Seconds between vehicle outlines in the trajectory plot.
        #[arg(long, default_value_t = 1.0)]
        shadow: f64,
    },
    /// Check the coordination-function axioms of a parameter or scenario file.
    ValidateParams { config: PathBuf },
    /// Compare analytic constraint rows with finite differences on random frames.
    CheckGradients {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        /// Perturb one analytic coefficient; the check must then fail.
        #[arg(long, hide = true)]
        break_derivative: bool,
    },
    /// Render a trajectory log to SVG.
    Plot {
        log: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Scenario file supplying the lane geometry (defaults otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        shadow: f64,
    },
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: USAGE,
        error: error.into(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(usage)
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig, Failure> {
    ScenarioConfig::from_json(&read(path)?)
        .with_context(|| format!("invalid scenario {}", path.display()))
        .map_err(usage)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(usage)
}

fn render(dir: &Path, log: &TrajectoryLog, geometry: &LaneGeometry, shadow: f64) -> Result<(), Failure> {
    write(dir, "trajectory.svg", &plot::trajectory_svg(log, geometry, shadow))?;
    write(dir, "barriers.svg", &plot::barrier_svg(log, 20.0))
}

fn cmd_run(config: &Path, out: &Path, tol: f64, shadow: f64) -> Result<u8, Failure> {
    if !(tol >= 0.0) {
        return Err(usage(anyhow::anyhow!("--tol must be non-negative")));
    }
    let cfg = load_scenario(config)?;
    fs::create_dir_all(out)
        .with_context(|| format!("cannot create {}", out.display()))
        .map_err(usage)?;
    let res = match simulator::run(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("simulation aborted: {e}");
            return Ok(CHECK_FAILED);
        }
    };
    let report = RunReport::new(&cfg.name, &res.log, &res.stats, tol);
    write(out, "trajectory.jsonl", &res.log.to_jsonl())?;
    write(out, "summary.csv", &summary_csv(&res.log))?;
    write(out, "report.json", &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    render(out, &res.log, &cfg.geometry, shadow)?;

    println!("scenario {}: invariance {} (tol {tol:e})", cfg.name, report.invariance);
    if let Some(m) = &report.min_barrier {
        println!("  min barrier {} = {:.6} at t = {:.2} ({})", m.barrier, m.value, m.time, m.vehicle);
    }
    for t in &report.tracking {
        println!(
            "  {}: final speed error {:.4} m/s, lateral error {:.4} m",
            t.vehicle, t.final_speed_error, t.final_lateral_error
        );
    }
    println!(
        "  fallbacks {}, solver failures {}, control step mean {:.2} us max {:.2} us",
        report.fallbacks,
        report.solver_failures,
        report.mean_step_seconds * 1e6,
        report.max_step_seconds * 1e6
    );
    println!("  wrote {}", out.display());
    Ok(if report.passed() { 0 } else { CHECK_FAILED })
}

fn coordination_of(path: &Path) -> Result<CoordinationConfig, Failure> {
    let text = read(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("malformed JSON in {}", path.display()))
        .map_err(usage)?;
    let ctx = || format!("invalid parameters in {}", path.display());
    if value.get("vehicles").is_some() {
        let cfg: ScenarioConfig = serde_json::from_str(&text).with_context(ctx).map_err(usage)?;
        Ok(cfg.controller.coordination)
    } else {
        serde_json::from_str(&text).with_context(ctx).map_err(usage)
    }
}

fn cmd_validate_params(config: &Path) -> Result<u8, Failure> {
    let coord = coordination_of(config)?;
    let report = coordination::validate(&coord);
    print!("{report}");
    let warnings = report.warnings().count();
    if report.passed() {
        println!("all checks passed ({warnings} warning(s))");
        Ok(0)
    } else {
        let failed = report.checks.iter().filter(|c| !c.passed).count();
        println!("{failed} check(s) failed");
        Ok(CHECK_FAILED)
    }
}

fn broken_rows(certs: &CertificateSet, frame: &NeighborFrame, y_ref: f64) -> lane_cbf::Result<Vec<ConstraintRow>> {
    let mut rows = gradcheck::analytic_rows(certs, frame, y_ref)?;
    rows[BarrierId::B3.index()].a_omega *= 1.001;
    Ok(rows)
}

fn cmd_check_gradients(seed: u64, samples: usize, tol: f64, broken: bool) -> Result<u8, Failure> {
    if samples == 0 {
        return Err(usage(anyhow::anyhow!("--samples must be at least 1")));
    }
    if !(tol > 0.0) {
        return Err(usage(anyhow::anyhow!("--tol must be positive")));
    }
    let settings = GradcheckSettings {
        samples,
        seed,
        tol,
        ..GradcheckSettings::default()
    };
    let certs = ControllerParams::default().certificates(&gradcheck::certification_geometry());
    let report = if broken {
        gradcheck::run_with(&certs, &settings, &broken_rows)
    } else {
        gradcheck::run(&certs, &settings)
    };
    print!("{report}");
    Ok(if report.passed() { 0 } else { CHECK_FAILED })
}

fn cmd_plot(log: &Path, out: &Path, config: Option<&Path>, shadow: f64) -> Result<u8, Failure> {
    let geometry = match config {
        Some(p) => load_scenario(p)?.geometry,
        None => LaneGeometry::default(),
    };
    let log = TrajectoryLog::from_jsonl(&read(log)?)
        .with_context(|| format!("invalid log {}", log.display()))
        .map_err(usage)?;
    fs::create_dir_all(out)
        .with_context(|| format!("cannot create {}", out.display()))
        .map_err(usage)?;
    render(out, &log, &geometry, shadow)?;
    println!("wrote {} and {}", out.join("trajectory.svg").display(), out.join("barriers.svg").display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out, tol, shadow } => cmd_run(config, out, *tol, *shadow),
        Command::ValidateParams { config } => cmd_validate_params(config),
        Command::CheckGradients {
            seed,
            samples,
            tol,
            break_derivative,
        } => cmd_check_gradients(*seed, *samples, *tol, *break_derivative),
        Command::Plot { log, out, config, shadow } => cmd_plot(log, out, config.as_deref(), *shadow),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

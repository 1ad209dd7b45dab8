//! Coordination functions.
//!
//! `theta` measures a longitudinal gap in units of a safety distance and
//! `lambda` maps it to a fraction of the lane width a neighbor concedes.
//! `rho` measures a lateral offset in lane widths and `sigma` maps it to the
//! fraction of the safety distance still owed to a vehicle on the next lane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Breakpoints of the piecewise `lambda`.
pub const LAMBDA_KNEE: f64 = 0.9;
pub const LAMBDA_SATURATION: f64 = 1.0;
/// Largest cubic/sigmoid junction mismatch tolerated by [`validate`].
pub const CONTINUITY_TOL: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaParams {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

impl Default for LambdaParams {
    fn default() -> Self {
        Self {
            a1: 234.14,
            a2: -0.872,
            a3: 0.4949,
            beta1: 1209.2,
            beta2: -0.9962,
            beta3: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaParams {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub s4: f64,
}

impl Default for SigmaParams {
    fn default() -> Self {
        Self {
            s1: 1.03,
            s2: 16.0,
            s3: 0.64,
            s4: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordinationConfig {
    /// Safety time constant [s].
    pub tau_d: f64,
    #[serde(default)]
    pub lambda: LambdaParams,
    #[serde(default)]
    pub sigma: SigmaParams,
}

impl Default for CoordinationConfig {
    fn default() -> Self {
        Self {
            tau_d: 0.9,
            lambda: LambdaParams::default(),
            sigma: SigmaParams::default(),
        }
    }
}

/// Gap between `x1` (ahead) and `x2` (behind) relative to the safety
/// distance `tau_d * v2` of the rear vehicle.
pub fn theta(x1: f64, x2: f64, v2: f64, tau_d: f64) -> Result<f64> {
    if !(v2 > 0.0) {
        return Err(Error::Domain(format!("theta needs a positive speed, got {v2}")));
    }
    if x1 < x2 {
        return Err(Error::Domain(format!(
            "theta needs x1 >= x2, got x1 = {x1}, x2 = {x2}"
        )));
    }
    Ok((x1 - x2) / (tau_d * v2))
}

pub fn lambda(theta: f64, p: &LambdaParams) -> f64 {
    if theta <= LAMBDA_KNEE {
        0.5 / 0.9 * theta
    } else if theta <= LAMBDA_SATURATION {
        p.a1 * (theta + p.a2).powi(3) + p.a3
    } else {
        logistic(p.beta1 * (theta + p.beta2)) + p.beta3
    }
}

/// Analytic derivative of [`lambda`]; at a breakpoint the left branch wins.
pub fn lambda_prime(theta: f64, p: &LambdaParams) -> f64 {
    if theta <= LAMBDA_KNEE {
        0.5 / 0.9
    } else if theta <= LAMBDA_SATURATION {
        3.0 * p.a1 * (theta + p.a2).powi(2)
    } else {
        let s = logistic(p.beta1 * (theta + p.beta2));
        p.beta1 * s * (1.0 - s)
    }
}

pub fn lambda_second(theta: f64, p: &LambdaParams) -> f64 {
    if theta <= LAMBDA_KNEE {
        0.0
    } else if theta <= LAMBDA_SATURATION {
        6.0 * p.a1 * (theta + p.a2)
    } else {
        let s = logistic(p.beta1 * (theta + p.beta2));
        p.beta1 * p.beta1 * s * (1.0 - s) * (1.0 - 2.0 * s)
    }
}

/// Lateral offset `y1 - y2` in lane widths.
pub fn rho(y1: f64, y2: f64, w: f64) -> Result<f64> {
    if !(w > 0.0) {
        return Err(Error::Domain(format!("lane width must be positive, got {w}")));
    }
    if y1 < y2 {
        return Err(Error::Domain(format!(
            "rho needs y1 >= y2, got y1 = {y1}, y2 = {y2}"
        )));
    }
    Ok((y1 - y2) / w)
}

pub fn sigma(rho: f64, p: &SigmaParams) -> f64 {
    p.s1 / (1.0 + (p.s2 * (rho - p.s3)).exp()) - p.s4
}

pub fn sigma_prime(rho: f64, p: &SigmaParams) -> f64 {
    // s1 * d/drho [1 / (1 + e)] with e = exp(s2 (rho - s3))
    let l = logistic(-p.s2 * (rho - p.s3));
    -p.s1 * p.s2 * l * (1.0 - l)
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Outcome of one axiom check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Set when the check passed only by virtue of the continuity tolerance.
    pub warning: Option<String>,
    /// Worst offending point `(argument, value)`.
    pub worst: Option<(f64, f64)>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.warning.is_some())
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            let tag = match (c.passed, &c.warning) {
                (false, _) => "FAIL",
                (true, Some(_)) => "WARN",
                (true, None) => "PASS",
            };
            write!(f, "[{tag}] {}: {}", c.name, c.detail)?;
            if let Some((a, v)) = c.worst {
                write!(f, " (worst at {a:.6} -> {v:.6})")?;
            }
            if let Some(w) = &c.warning {
                write!(f, "; {w}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

const GRID: usize = 3000;

fn grid(lo: f64, hi: f64) -> impl Iterator<Item = f64> {
    (0..=GRID).map(move |i| lo + (hi - lo) * i as f64 / GRID as f64)
}

/// Find the grid point minimising `margin`; the check passes when that
/// margin is non-negative.
fn worst_of(points: impl Iterator<Item = f64>, f: impl Fn(f64) -> f64, margin: impl Fn(f64, f64) -> f64) -> (f64, f64, f64) {
    let mut worst = (f64::NAN, f64::NAN, f64::INFINITY);
    for t in points {
        let v = f(t);
        let m = margin(t, v);
        if m < worst.2 || worst.2.is_nan() {
            worst = (t, v, m);
        }
    }
    worst
}

fn bound_check(
    name: &'static str,
    detail: String,
    points: impl Iterator<Item = f64>,
    f: impl Fn(f64) -> f64,
    margin: impl Fn(f64, f64) -> f64,
) -> Check {
    let (t, v, m) = worst_of(points, f, margin);
    Check {
        name,
        passed: m >= 0.0,
        warning: None,
        worst: Some((t, v)),
        detail,
    }
}

/// Largest violation of monotonicity on consecutive grid points; positive
/// means `f` moved against the required direction.
fn monotone_check(
    name: &'static str,
    detail: String,
    lo: f64,
    hi: f64,
    f: impl Fn(f64) -> f64,
    increasing: bool,
    strict: bool,
) -> Check {
    let pts: Vec<f64> = grid(lo, hi).collect();
    let mut worst: Option<(f64, f64, f64)> = None;
    for pair in pts.windows(2) {
        let (a, b) = (f(pair[0]), f(pair[1]));
        let step = if increasing { b - a } else { a - b };
        let bad = if strict { step <= 0.0 } else { step < 0.0 };
        if bad && worst.is_none_or(|w| step < w.2) {
            worst = Some((pair[1], b, step));
        }
    }
    Check {
        name,
        passed: worst.is_none(),
        warning: None,
        worst: worst.map(|(t, v, _)| (t, v)),
        detail,
    }
}

/// Check the lambda and sigma axioms on dense grids.
pub fn validate(config: &CoordinationConfig) -> ValidationReport {
    let lp = config.lambda;
    let sp = config.sigma;
    let lam = |t: f64| lambda(t, &lp);
    let sig = |r: f64| sigma(r, &sp);
    let mut checks = Vec::new();

    checks.push(Check {
        name: "tau_d_positive",
        passed: config.tau_d > 0.0,
        warning: None,
        worst: None,
        detail: format!("tau_d = {}", config.tau_d),
    });

    let sign_ok = lp.a1 > 0.0 && lp.a2 < 0.0 && lp.a3 > 0.0 && lp.beta1 > 0.0 && lp.beta2 < 0.0 && lp.beta3 > 0.0;
    checks.push(Check {
        name: "lambda_param_signs",
        passed: sign_ok,
        warning: None,
        worst: None,
        detail: "a1, a3, beta1, beta3 > 0 and a2, beta2 < 0".into(),
    });
    let s_ok = sp.s1 > 0.0 && sp.s2 > 0.0 && sp.s3 > 0.0 && sp.s4 > 0.0;
    checks.push(Check {
        name: "sigma_param_signs",
        passed: s_ok,
        warning: None,
        worst: None,
        detail: "s1..s4 > 0".into(),
    });

    let l0 = lam(0.0);
    checks.push(Check {
        name: "lambda_zero",
        passed: l0 == 0.0,
        warning: None,
        worst: Some((0.0, l0)),
        detail: "lambda(0) = 0".into(),
    });
    let l09 = lam(LAMBDA_KNEE);
    checks.push(Check {
        name: "lambda_half_at_knee",
        passed: (l09 - 0.5).abs() <= 1e-9,
        warning: None,
        worst: Some((LAMBDA_KNEE, l09)),
        detail: "lambda(0.9) = 0.5 +- 1e-9".into(),
    });

    let mut mono = monotone_check(
        "lambda_monotone",
        "lambda nondecreasing on [0, 3]".into(),
        0.0,
        3.0,
        lam,
        true,
        false,
    );
    // the coarse check can step over the narrow cubic branch; refine it
    if mono.passed {
        let fine = monotone_check("lambda_monotone", String::new(), 0.9, 1.0, lam, true, false);
        if !fine.passed {
            mono.passed = false;
            mono.worst = fine.worst;
        }
    }
    checks.push(mono);

    let mut sat = bound_check(
        "lambda_saturation",
        format!("lambda(theta) in [1, 1.01] for theta >= 1 (tolerance {CONTINUITY_TOL})"),
        grid(1.0, 3.0),
        lam,
        |_, v| (v - (1.0 - CONTINUITY_TOL)).min(1.01 + CONTINUITY_TOL - v),
    );
    if sat.passed {
        let (t, v, m) = worst_of(grid(1.0, 3.0), lam, |_, v| (v - 1.0).min(1.01 - v));
        if m < 0.0 {
            sat.warning = Some(format!("strict band missed by {:.4} at theta = {t} (lambda = {v:.4})", -m));
        }
    }
    checks.push(sat);

    for (name, at) in [("lambda_continuity_knee", LAMBDA_KNEE), ("lambda_continuity_saturation", LAMBDA_SATURATION)] {
        let left = lam(at);
        let right = if at == LAMBDA_KNEE {
            lp.a1 * (at + lp.a2).powi(3) + lp.a3
        } else {
            logistic(lp.beta1 * (at + lp.beta2)) + lp.beta3
        };
        let gap = (left - right).abs();
        checks.push(Check {
            name,
            passed: gap <= CONTINUITY_TOL,
            warning: (gap > 1e-3).then(|| format!("branch mismatch {gap:.4} at theta = {at}")),
            worst: Some((at, right - left)),
            detail: format!("branch values agree within {CONTINUITY_TOL}"),
        });
    }

    checks.push(monotone_check(
        "sigma_strictly_decreasing",
        "sigma strictly decreasing on [0, 1.5]".into(),
        0.0,
        1.5,
        sig,
        false,
        true,
    ));
    checks.push(bound_check(
        "sigma_vanishes_across_lane",
        "sigma(rho) <= 0 for rho >= 0.9".into(),
        grid(0.9, 3.0),
        sig,
        |_, v| -v,
    ));
    checks.push(bound_check(
        "sigma_half_lane",
        "sigma(rho) >= 0.9 for rho in [0.3, 0.5]".into(),
        grid(0.3, 0.5),
        sig,
        |_, v| v - 0.9,
    ));
    checks.push(bound_check(
        "sigma_same_lane",
        "sigma(rho) in [1, 1.01] for rho in [0, 0.3]".into(),
        grid(0.0, 0.3),
        sig,
        |_, v| (v - 1.0).min(1.01 - v),
    ));

    ValidationReport { checks }
}

/// Re-solve the cubic branch so that value and slope match the linear
/// branch at 0.9 and the value matches the sigmoid branch at 1.
///
/// Returns parameters with `a1, a2, a3` replaced; the sigmoid is kept.
pub fn refit_lambda(p: &LambdaParams) -> Result<LambdaParams> {
    let target = (logistic(p.beta1 * (LAMBDA_SATURATION + p.beta2)) + p.beta3).max(1.0 + 1e-12);
    let slope = 0.5 / 0.9;
    let rise = target - 0.5;
    // With u = 0.9 + a2 and d = 0.1:
    //   a1 ((u + d)^3 - u^3) = rise,   3 a1 u^2 = slope
    // so ((u + d)^3 - u^3) / (3 u^2) = rise / slope, a quadratic in 1/u.
    let d = LAMBDA_SATURATION - LAMBDA_KNEE;
    let k = rise / slope;
    // (3 u^2 d + 3 u d^2 + d^3) = 3 k u^2  ->  3 (d - k) u^2 + 3 d^2 u + d^3 = 0
    let (qa, qb, qc) = (3.0 * (d - k), 3.0 * d * d, d * d * d);
    let disc = qb * qb - 4.0 * qa * qc;
    if qa >= 0.0 || disc < 0.0 {
        return Err(Error::Domain("no monotone cubic bridges the branches".into()));
    }
    let u = (-qb - disc.sqrt()) / (2.0 * qa);
    if !(u > 0.0) {
        return Err(Error::Domain("refit produced a non-positive cubic offset".into()));
    }
    let a1 = slope / (3.0 * u * u);
    let a2 = u - LAMBDA_KNEE;
    let a3 = 0.5 - a1 * u.powi(3);
    Ok(LambdaParams { a1, a2, a3, ..*p })
}

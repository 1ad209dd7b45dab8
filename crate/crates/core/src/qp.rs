//! The per-step quadratic program and a dense dual active-set solver.
//!
//! Decision variables are `(v, omega, delta_omega)`; the speed slack
//! `delta_v = v_ref - v` is folded into the cost. The solver works in
//! scaled coordinates where the Hessian is the identity and every
//! constraint normal has unit length, so tolerances are unitless.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::certificates::ConstraintRow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpWeights {
    pub h_v: f64,
    pub h_omega: f64,
    pub p_v: f64,
    pub p_omega: f64,
}

impl Default for QpWeights {
    fn default() -> Self {
        Self {
            h_v: 1.0,
            h_omega: 70_000.0,
            p_v: 1e9,
            p_omega: 1e9,
        }
    }
}

impl QpWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.h_v > 0.0
            && self.h_omega > 0.0
            && self.p_v >= 0.0
            && self.p_omega > 0.0
            && [self.h_v, self.h_omega, self.p_v, self.p_omega].iter().all(|w| w.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("cost weights must satisfy h_v, h_omega, p_omega > 0, p_v >= 0: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBounds {
    pub v_min: f64,
    pub v_max: f64,
    pub omega_min: f64,
    pub omega_max: f64,
}

impl Default for InputBounds {
    fn default() -> Self {
        Self {
            v_min: 0.0,
            v_max: 30.0,
            omega_min: -0.5,
            omega_max: 0.5,
        }
    }
}

impl InputBounds {
    pub fn validate(&self) -> Result<()> {
        if self.v_min < self.v_max && self.omega_min < self.omega_max && self.v_min.is_finite() && self.v_max.is_finite()
            && self.omega_min.is_finite() && self.omega_max.is_finite()
        {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("empty or unbounded input box {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub weights: QpWeights,
    pub bounds: InputBounds,
    pub v_ref: f64,
    pub rows: Vec<ConstraintRow>,
}

impl QpProblem {
    /// `H_v v^2 + H_omega omega^2 + p_v (v_ref - v)^2 + p_omega delta^2`.
    pub fn objective(&self, v: f64, omega: f64, delta_omega: f64) -> f64 {
        let w = &self.weights;
        let dv = self.v_ref - v;
        w.h_v * v * v + w.h_omega * omega * omega + w.p_v * dv * dv + w.p_omega * delta_omega * delta_omega
    }

    /// Diagonal Hessian and linear term of `0.5 z'Qz + c'z + const`.
    fn quadratic(&self) -> ([f64; 3], [f64; 3]) {
        let w = &self.weights;
        (
            [2.0 * (w.h_v + w.p_v), 2.0 * w.h_omega, 2.0 * w.p_omega],
            [-2.0 * w.p_v * self.v_ref, 0.0, 0.0],
        )
    }

    /// Unconstrained minimizer.
    pub fn unconstrained_minimum(&self) -> [f64; 3] {
        let (q, c) = self.quadratic();
        [-c[0] / q[0], -c[1] / q[1], -c[2] / q[2]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Active {
    Row(usize),
    VMin,
    VMax,
    OmegaMin,
    OmegaMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub v: f64,
    pub omega: f64,
    pub delta_omega: f64,
    pub delta_v: f64,
    pub objective: f64,
    pub active_set: Vec<Active>,
    /// Multipliers of `active_set`, in scaled units.
    pub multipliers: Vec<f64>,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub iterations: usize,
    pub status: QpStatus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub kkt_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-8,
            feas_tol: 1e-7,
            max_iter: 100,
        }
    }
}

/// A constraint `n' z >= b` in scaled coordinates with `|n| = 1`.
#[derive(Debug, Clone, Copy)]
struct Scaled {
    n: Vector3<f64>,
    b: f64,
    tag: Active,
}

struct Scaling {
    /// `zbar = d .* z / kappa`
    d: [f64; 3],
    kappa: f64,
    lin: Vector3<f64>,
    cons: Vec<Scaled>,
    /// Rows with no coefficients; `Some(row)` when violated.
    empty_violated: Option<usize>,
}

fn scale(qp: &QpProblem) -> Scaling {
    let (q, c) = qp.quadratic();
    let d = [q[0].sqrt(), q[1].sqrt(), q[2].sqrt()];
    let lin = Vector3::new(c[0] / d[0], c[1] / d[1], c[2] / d[2]);

    let b = &qp.bounds;
    let mut raw: Vec<([f64; 3], f64, Active)> = qp
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| ([r.a_v, r.a_omega, r.a_delta_omega], r.rhs, Active::Row(i)))
        .collect();
    raw.push(([1.0, 0.0, 0.0], b.v_min, Active::VMin));
    raw.push(([-1.0, 0.0, 0.0], -b.v_max, Active::VMax));
    raw.push(([0.0, 1.0, 0.0], b.omega_min, Active::OmegaMin));
    raw.push(([0.0, -1.0, 0.0], -b.omega_max, Active::OmegaMax));

    let mut empty_violated = None;
    let mut cons = Vec::with_capacity(raw.len());
    for (a, rhs, tag) in raw {
        let n = Vector3::new(a[0] / d[0], a[1] / d[1], a[2] / d[2]);
        let norm = n.norm();
        let coef_size = a[0].abs() + a[1].abs() + a[2].abs();
        if coef_size <= 1e-12 * (1.0 + rhs.abs()) || norm == 0.0 {
            if rhs > 0.0 {
                if let Active::Row(i) = tag {
                    empty_violated.get_or_insert(i);
                }
            }
            continue;
        }
        cons.push(Scaled { n: n / norm, b: rhs / norm, tag });
    }
    let kappa = cons
        .iter()
        .map(|s| s.b.abs())
        .fold(lin.amax(), f64::max)
        .max(1.0);
    for s in &mut cons {
        s.b /= kappa;
    }
    Scaling {
        d,
        kappa,
        lin: lin / kappa,
        cons,
        empty_violated,
    }
}

/// Solve with default settings.
pub fn solve(qp: &QpProblem) -> QpSolution {
    solve_with(qp, &SolverSettings::default())
}

/// Goldfarb-Idnani dual active-set method on the scaled problem
/// `min 0.5 |z|^2 + lin' z  s.t.  n_i' z >= b_i`.
pub fn solve_with(qp: &QpProblem, settings: &SolverSettings) -> QpSolution {
    if qp.weights.validate().is_err() || qp.bounds.validate().is_err() || !qp.v_ref.is_finite() {
        return failed(QpStatus::Invalid, 0);
    }
    let sc = scale(qp);
    if sc.empty_violated.is_some() {
        return failed(QpStatus::Infeasible, 0);
    }
    let cons = &sc.cons;
    let slack = |z: &Vector3<f64>, i: usize| cons[i].n.dot(z) - cons[i].b;

    let mut z = -sc.lin;
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let inner_tol = 1e-13;

    loop {
        // most violated constraint
        let mut p = None;
        let mut worst = -inner_tol;
        for i in 0..cons.len() {
            if active.contains(&i) {
                continue;
            }
            let s = slack(&z, i);
            if s < worst {
                worst = s;
                p = Some(i);
            }
        }
        let Some(p) = p else { break };
        let np = cons[p].n;
        let mut up = 0.0;

        loop {
            iterations += 1;
            if iterations > settings.max_iter {
                return finish(qp, settings, &sc, z, &active, &u, iterations, QpStatus::MaxIter);
            }
            let (step, r) = project(cons, &active, &np);
            let s_p = slack(&z, p);

            // partial (dual) step length
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (j, &rj) in r.iter().enumerate() {
                if rj > 1e-14 {
                    let t = u[j] / rj;
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            let curvature = step.dot(&np);
            let t2 = if step.norm() > 1e-12 && curvature > 1e-14 {
                -s_p / curvature
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return finish(qp, settings, &sc, z, &active, &u, iterations, QpStatus::Infeasible);
            }

            if t2.is_finite() {
                z += step * t;
            }
            for (j, rj) in r.iter().enumerate() {
                u[j] -= t * rj;
            }
            up += t;

            if t2 <= t1 {
                active.push(p);
                u.push(up);
                break;
            }
            let j = drop.expect("finite partial step has a blocking index");
            active.remove(j);
            u.remove(j);
        }
    }
    polish(&sc, &mut z, &active, &mut u);
    finish(qp, settings, &sc, z, &active, &u, iterations, QpStatus::Optimal)
}

/// Projection of `np` onto the null space of the active normals, and the
/// coefficients expressing `np` in them.
fn project(cons: &[Scaled], active: &[usize], np: &Vector3<f64>) -> (Vector3<f64>, Vec<f64>) {
    if active.is_empty() {
        return (*np, Vec::new());
    }
    let n = DMatrix::from_fn(3, active.len(), |r, c| cons[active[c]].n[r]);
    let gram = n.transpose() * &n;
    let rhs = n.transpose() * DVector::from_column_slice(np.as_slice());
    let r = gram
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .unwrap_or_else(|| gram.pseudo_inverse(1e-14).expect("pseudo inverse") * &rhs);
    let in_span = &n * &r;
    let step = np - Vector3::new(in_span[0], in_span[1], in_span[2]);
    (step, r.iter().copied().collect())
}

/// Re-solve the equality problem on the final active set.
fn polish(sc: &Scaling, z: &mut Vector3<f64>, active: &[usize], u: &mut [f64]) {
    if active.is_empty() {
        *z = -sc.lin;
        return;
    }
    let n = DMatrix::from_fn(3, active.len(), |r, c| sc.cons[active[c]].n[r]);
    let b = DVector::from_iterator(active.len(), active.iter().map(|&i| sc.cons[i].b));
    let lin = DVector::from_column_slice(sc.lin.as_slice());
    let gram = n.transpose() * &n;
    let Some(ch) = gram.cholesky() else { return };
    let mult = ch.solve(&(b + n.transpose() * &lin));
    if mult.iter().any(|m| *m < -1e-12) {
        return;
    }
    let cand = -&lin + &n * &mult;
    *z = Vector3::new(cand[0], cand[1], cand[2]);
    for (dst, m) in u.iter_mut().zip(mult.iter()) {
        *dst = *m;
    }
}

fn finish(qp: &QpProblem, settings: &SolverSettings, sc: &Scaling, z: Vector3<f64>, active: &[usize], u: &[f64], iterations: usize, status: QpStatus) -> QpSolution {
    let unscale = |k: usize| z[k] * sc.kappa / sc.d[k];
    let (v, omega, delta_omega) = (unscale(0), unscale(1), unscale(2));

    let mut grad = z + sc.lin;
    for (&i, &m) in active.iter().zip(u) {
        grad -= sc.cons[i].n * m;
    }
    let stationarity = grad.amax();
    let mut max_violation: f64 = 0.0;
    for c in &sc.cons {
        max_violation = max_violation.max(c.b - c.n.dot(&z));
    }
    let dual = u.iter().fold(0.0f64, |acc, m| acc.max(-m));
    let compl = active
        .iter()
        .zip(u)
        .fold(0.0f64, |acc, (&i, m)| acc.max((m * (sc.cons[i].n.dot(&z) - sc.cons[i].b)).abs()));
    let kkt_residual = stationarity.max(dual).max(compl).max(max_violation);

    let mut status = status;
    if status == QpStatus::Optimal && max_violation > settings.feas_tol {
        status = QpStatus::Infeasible;
    }
    QpSolution {
        v,
        omega,
        delta_omega,
        delta_v: qp.v_ref - v,
        objective: qp.objective(v, omega, delta_omega),
        active_set: active.iter().map(|&i| sc.cons[i].tag).collect(),
        multipliers: u.to_vec(),
        kkt_residual,
        max_violation,
        iterations,
        status,
    }
}

fn failed(status: QpStatus, iterations: usize) -> QpSolution {
    QpSolution {
        v: f64::NAN,
        omega: f64::NAN,
        delta_omega: f64::NAN,
        delta_v: f64::NAN,
        objective: f64::NAN,
        active_set: Vec::new(),
        multipliers: Vec::new(),
        kkt_residual: f64::INFINITY,
        max_violation: f64::INFINITY,
        iterations,
        status,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSolution {
    pub v: f64,
    pub omega: f64,
    pub delta_omega: f64,
    pub objective: f64,
}

/// Exhaustive grid search over the input box. `delta_omega` is set to its
/// cheapest admissible value at each grid point. `None` when no grid point
/// is feasible.
pub fn brute_force_oracle(qp: &QpProblem, resolution: usize) -> Option<OracleSolution> {
    let n = resolution.max(2);
    let b = &qp.bounds;
    let mut best: Option<OracleSolution> = None;
    for i in 0..n {
        let v = b.v_min + (b.v_max - b.v_min) * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let omega = b.omega_min + (b.omega_max - b.omega_min) * j as f64 / (n - 1) as f64;
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut ok = true;
            for r in &qp.rows {
                let need = r.rhs - r.a_v * v - r.a_omega * omega;
                if r.a_delta_omega > 0.0 {
                    lo = lo.max(need / r.a_delta_omega);
                } else if r.a_delta_omega < 0.0 {
                    hi = hi.min(need / r.a_delta_omega);
                } else if need > 1e-12 * (1.0 + r.rhs.abs()) {
                    ok = false;
                    break;
                }
            }
            if !ok || lo > hi {
                continue;
            }
            let delta = if lo > 0.0 {
                lo
            } else if hi < 0.0 {
                hi
            } else {
                0.0
            };
            let f = qp.objective(v, omega, delta);
            if best.is_none_or(|s| f < s.objective) {
                best = Some(OracleSolution {
                    v,
                    omega,
                    delta_omega: delta,
                    objective: f,
                });
            }
        }
    }
    best
}

//! Unicycle kinematics and fixed-step integration.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

/// Pose of one vehicle together with the input it is currently holding.
///
/// `v_applied` is what neighbors measure as the vehicle's speed and what the
/// vehicle's own certificates use wherever a speed appears inside a safety
/// distance or a coordination-function argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    #[serde(default)]
    pub v_applied: f64,
    #[serde(default)]
    pub omega_applied: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, psi: f64, v_applied: f64) -> Self {
        Self {
            x,
            y,
            psi,
            v_applied,
            omega_applied: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.psi.is_finite()
            && self.v_applied.is_finite()
            && self.omega_applied.is_finite()
    }

    /// Heading strictly inside (-pi/2, pi/2).
    pub fn heading_ok(&self) -> bool {
        self.psi > -FRAC_PI_2 && self.psi < FRAC_PI_2
    }

    /// Velocity components from the held speed.
    pub fn velocity(&self) -> (f64, f64) {
        (
            self.v_applied * self.psi.cos(),
            self.v_applied * self.psi.sin(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub v: f64,
    pub omega: f64,
}

impl ControlInput {
    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }
}

/// Time derivative of the pose `(dx, dy, dpsi)`.
pub fn dynamics(state: &VehicleState, input: &ControlInput) -> (f64, f64, f64) {
    derivative(state.psi, input)
}

#[inline]
fn derivative(psi: f64, input: &ControlInput) -> (f64, f64, f64) {
    (input.v * psi.cos(), input.v * psi.sin(), input.omega)
}

/// One classical RK4 step under a zero-order-hold input.
///
/// The returned state holds `input` as its applied input.
pub fn step(state: &VehicleState, input: &ControlInput, dt: f64) -> Result<VehicleState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !state.is_finite() || !input.v.is_finite() || !input.omega.is_finite() {
        return Err(Error::NonFinite(format!(
            "cannot integrate state {state:?} with input {input:?}"
        )));
    }

    let (x, y, psi) = (state.x, state.y, state.psi);
    let k1 = derivative(psi, input);
    let k2 = derivative(psi + 0.5 * dt * k1.2, input);
    let k3 = derivative(psi + 0.5 * dt * k2.2, input);
    let k4 = derivative(psi + dt * k3.2, input);

    let next = VehicleState {
        x: x + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        y: y + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        psi: psi + dt / 6.0 * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2),
        v_applied: input.v,
        omega_applied: input.omega,
    };
    if !next.is_finite() {
        return Err(Error::NonFinite(format!("integration produced {next:?}")));
    }
    Ok(next)
}

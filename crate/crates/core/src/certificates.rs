//! Barrier and Lyapunov certificates and the affine QP rows they induce.
//!
//! Seven barriers guard the ego:
//!
//! | id | slot | kind | guards |
//! |----|------|------|--------|
//! | B1 | 0F   | r = 1 | headway to the leader |
//! | B2 | -1B  | r = 2 | lower lateral bound, conceded by the right-rear vehicle |
//! | B3 | -1F  | r = 2 | lower lateral bound, conceded by the right-front vehicle |
//! | B4 | +1B  | r = 2 | upper lateral bound, conceded by the left-rear vehicle |
//! | B5 | +1F  | r = 2 | upper lateral bound, conceded by the left-front vehicle |
//! | B6 | -1F  | r = 1 | headway to the right-front vehicle, faded by lateral offset |
//! | B7 | +1F  | r = 1 | headway to the left-front vehicle, faded by lateral offset |
//!
//! Rows are linear in `(v, omega, delta_omega)`. Derivative chains follow
//! three conventions:
//!
//! * the ego's held speed `v_applied` stands in for its speed wherever the
//!   speed sits inside a safety distance or a coordination argument, and is
//!   treated as constant ([`SpeedTerm::Frozen`]) or as lagging the command
//!   over one control period ([`SpeedTerm::Lagged`]);
//! * neighbors keep their measured speed and heading;
//! * second-order rows differentiate `psi1` (built with held inputs) along
//!   the ego kinematics driven by the current decision variables.

use serde::{Deserialize, Serialize};

use crate::coordination::{self, CoordinationConfig};
use crate::error::{Error, Result};
use crate::perception::{LaneGeometry, Neighbor, NeighborFrame, Slot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum BarrierId {
    B1,
    B2,
    B3,
    B4,
    B5,
    B6,
    B7,
}

impl BarrierId {
    pub const ALL: [BarrierId; 7] = [
        BarrierId::B1,
        BarrierId::B2,
        BarrierId::B3,
        BarrierId::B4,
        BarrierId::B5,
        BarrierId::B6,
        BarrierId::B7,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn relative_degree(self) -> u8 {
        match self {
            BarrierId::B1 | BarrierId::B6 | BarrierId::B7 => 1,
            _ => 2,
        }
    }

    pub fn slot(self) -> Slot {
        match self {
            BarrierId::B1 => Slot::SameFront,
            BarrierId::B2 => Slot::RightBack,
            BarrierId::B3 | BarrierId::B6 => Slot::RightFront,
            BarrierId::B4 => Slot::LeftBack,
            BarrierId::B5 | BarrierId::B7 => Slot::LeftFront,
        }
    }

    fn shape(self) -> Shape {
        match self {
            BarrierId::B1 => Shape::Headway { fade: None },
            BarrierId::B6 => Shape::Headway { fade: Some(1.0) },
            BarrierId::B7 => Shape::Headway { fade: Some(-1.0) },
            BarrierId::B2 => Shape::Lateral { ego_ahead: true, upper: false },
            BarrierId::B3 => Shape::Lateral { ego_ahead: false, upper: false },
            BarrierId::B4 => Shape::Lateral { ego_ahead: true, upper: true },
            BarrierId::B5 => Shape::Lateral { ego_ahead: false, upper: true },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BarrierId::B1 => "b1",
            BarrierId::B2 => "b2",
            BarrierId::B3 => "b3",
            BarrierId::B4 => "b4",
            BarrierId::B5 => "b5",
            BarrierId::B6 => "b6",
            BarrierId::B7 => "b7",
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    /// `x_n - x_E - tau v_E * fade(rho)`; `fade = Some(s)` uses
    /// `rho = s (y_E - y_n) / w`, `None` means no fade (factor 1).
    Headway { fade: Option<f64> },
    /// `+-(y_E - bound) + w lambda(theta)`.
    Lateral { ego_ahead: bool, upper: bool },
}

/// Linear class-K gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassKConfig {
    pub gamma1_gain: f64,
    pub gamma2_gain: f64,
    pub mu1_gain: f64,
    pub alpha_gain: f64,
}

impl Default for ClassKConfig {
    fn default() -> Self {
        Self {
            gamma1_gain: 1.0,
            gamma2_gain: 1.0,
            mu1_gain: 5.0,
            alpha_gain: 0.8,
        }
    }
}

impl ClassKConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [self.gamma1_gain, self.gamma2_gain, self.mu1_gain, self.alpha_gain];
        if all.iter().all(|g| *g > 0.0 && g.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidScenario("class-K gains must be positive".into()))
        }
    }
}

/// How the ego's own speed behaves inside a derivative chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpeedTerm {
    /// Held speed is a constant of the chain.
    #[default]
    Frozen,
    /// Held speed relaxes to the commanded speed over `period` seconds,
    /// `d/dt v_held = (v - v_held) / period`. Applied to barrier rows only.
    Lagged { period: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowOrigin {
    Barrier(BarrierId),
    Lyapunov,
}

/// `a_v v + a_omega omega + a_delta_omega delta_omega >= rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub a_v: f64,
    pub a_omega: f64,
    pub a_delta_omega: f64,
    pub rhs: f64,
    pub origin: RowOrigin,
}

impl ConstraintRow {
    pub fn lhs(&self, v: f64, omega: f64, delta_omega: f64) -> f64 {
        self.a_v * v + self.a_omega * omega + self.a_delta_omega * delta_omega
    }

    /// Non-negative when the row holds.
    pub fn margin(&self, v: f64, omega: f64, delta_omega: f64) -> f64 {
        self.lhs(v, omega, delta_omega) - self.rhs
    }

    fn is_finite(&self) -> bool {
        self.a_v.is_finite() && self.a_omega.is_finite() && self.a_delta_omega.is_finite() && self.rhs.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierEval {
    pub id: BarrierId,
    pub value: f64,
    pub psi1: Option<f64>,
    pub row: ConstraintRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEval {
    pub value: f64,
    pub eta0: f64,
    pub row: ConstraintRow,
}

/// Everything a vehicle needs to turn a frame into certificate rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateSet {
    pub geometry: LaneGeometry,
    pub coord: CoordinationConfig,
    pub gains: ClassKConfig,
    pub speed_term: SpeedTerm,
    /// Lower clamp on speeds used as `theta` denominators [m/s].
    pub speed_floor: f64,
}

/// Affine map `u -> c_v v + c_omega omega + c_0` plus the scalar it came from.
#[derive(Debug, Clone, Copy)]
struct Affine {
    c_v: f64,
    c_omega: f64,
    c_0: f64,
}

struct LateralParts {
    value: f64,
    psi1: f64,
    d_x_ego: f64,
    d_y_ego: f64,
    d_psi_ego: f64,
    d_v_held: f64,
    d_x_other: f64,
}

impl CertificateSet {
    /// Frozen speed term, 0.5 m/s speed floor.
    pub fn new(geometry: LaneGeometry, coord: CoordinationConfig, gains: ClassKConfig) -> Self {
        Self {
            geometry,
            coord,
            gains,
            speed_term: SpeedTerm::Frozen,
            speed_floor: 0.5,
        }
    }

    fn floor(&self, v: f64) -> f64 {
        v.max(self.speed_floor)
    }

    /// Value of barrier `id` on `frame`.
    pub fn eval_b(&self, id: BarrierId, frame: &NeighborFrame) -> Result<f64> {
        let value = match id.shape() {
            Shape::Headway { fade } => self.headway_value(frame.get(id.slot()), frame, fade)?,
            Shape::Lateral { ego_ahead, upper } => {
                let (bound, theta) = self.lateral_inputs(frame, frame.get(id.slot()), ego_ahead, upper)?;
                let side = if upper { -1.0 } else { 1.0 };
                side * (frame.ego.y - bound) + self.geometry.lane_width * coordination::lambda(theta, &self.coord.lambda)
            }
        };
        if !value.is_finite() {
            return Err(Error::CorruptFrame(format!("{} evaluated to {value}", id.name())));
        }
        Ok(value)
    }

    pub fn eval_all(&self, frame: &NeighborFrame) -> Result<[f64; 7]> {
        let mut out = [0.0; 7];
        for id in BarrierId::ALL {
            out[id.index()] = self.eval_b(id, frame)?;
        }
        Ok(out)
    }

    fn fade(&self, frame: &NeighborFrame, other: &Neighbor, sign: f64) -> Result<(f64, f64, f64)> {
        let (y1, y2) = if sign > 0.0 {
            (frame.ego.y, other.state.y)
        } else {
            (other.state.y, frame.ego.y)
        };
        let rho = coordination::rho(y1, y2, self.geometry.lane_width)
            .map_err(|e| Error::CorruptFrame(e.to_string()))?;
        Ok((
            rho,
            coordination::sigma(rho, &self.coord.sigma),
            coordination::sigma_prime(rho, &self.coord.sigma),
        ))
    }

    fn headway_value(&self, other: &Neighbor, frame: &NeighborFrame, fade: Option<f64>) -> Result<f64> {
        let factor = match fade {
            None => 1.0,
            Some(sign) => self.fade(frame, other, sign)?.1,
        };
        Ok(other.state.x - frame.ego.x - self.coord.tau_d * frame.ego.v_applied * factor)
    }

    /// Returns the lane bound and `theta` of a lateral barrier.
    fn lateral_inputs(&self, frame: &NeighborFrame, other: &Neighbor, ego_ahead: bool, upper: bool) -> Result<(f64, f64)> {
        let bound = if upper {
            self.geometry.y_max(frame.ego_lane)
        } else {
            self.geometry.y_min(frame.ego_lane)
        };
        let tau = self.coord.tau_d;
        let theta = if ego_ahead {
            coordination::theta(frame.ego.x, other.state.x, self.floor(other.speed()), tau)
        } else {
            coordination::theta(other.state.x, frame.ego.x, self.floor(frame.ego.v_applied), tau)
        }
        .map_err(|e| Error::CorruptFrame(e.to_string()))?;
        Ok((bound, theta))
    }

    fn lateral_parts(&self, frame: &NeighborFrame, other: &Neighbor, ego_ahead: bool, upper: bool) -> Result<LateralParts> {
        let ego = &frame.ego;
        let w = self.geometry.lane_width;
        let tau = self.coord.tau_d;
        let k1 = self.gains.gamma1_gain;
        let lp = &self.coord.lambda;

        let (bound, theta) = self.lateral_inputs(frame, other, ego_ahead, upper)?;
        let side = if upper { -1.0 } else { 1.0 };
        let lam = coordination::lambda(theta, lp);
        let lam1 = coordination::lambda_prime(theta, lp);
        let lam2 = coordination::lambda_second(theta, lp);

        let v_held = ego.v_applied;
        let (sin_e, cos_e) = ego.psi.sin_cos();
        let xdot_ego = v_held * cos_e;
        let xdot_other = other.speed() * other.state.psi.cos();

        // theta = e (x_E - x_n) / D with e = +1 when the ego is ahead
        let e = if ego_ahead { 1.0 } else { -1.0 };
        let denom_speed = if ego_ahead { other.speed() } else { v_held };
        let denom = tau * self.floor(denom_speed);
        let theta_dot = e * (xdot_ego - xdot_other) / denom;

        let value = side * (ego.y - bound) + w * lam;
        let psi1 = side * v_held * sin_e + w * lam1 * theta_dot + k1 * value;

        let dtheta_dx = e / denom;
        let d_x_ego = (w * lam2 * theta_dot + k1 * w * lam1) * dtheta_dx;
        let d_y_ego = k1 * side;
        let d_psi_ego = side * v_held * cos_e + w * lam1 * e * (-v_held * sin_e) / denom;

        // sensitivity to the held speed; the denominator only moves with it
        // when the ego is behind and above the floor
        let denom_moves = !ego_ahead && v_held > self.speed_floor;
        let dtheta_dv = if denom_moves { -theta / v_held } else { 0.0 };
        let dthetadot_dv = if denom_moves {
            // theta_dot = (xdot_n - v cos) / (tau v) = xdot_n / (tau v) - cos / tau
            -xdot_other / (tau * v_held * v_held)
        } else {
            e * cos_e / denom
        };
        let d_value_dv = w * lam1 * dtheta_dv;
        let d_v_held = side * sin_e + w * lam2 * dtheta_dv * theta_dot + w * lam1 * dthetadot_dv + k1 * d_value_dv;

        Ok(LateralParts {
            value,
            psi1,
            d_x_ego,
            d_y_ego,
            d_psi_ego,
            d_v_held,
            d_x_other: -d_x_ego,
        })
    }

    /// `u -> d/dt (headway barrier)` as an affine map.
    fn headway_rate(&self, frame: &NeighborFrame, other: &Neighbor, fade: Option<f64>) -> Result<(f64, Affine)> {
        let ego = &frame.ego;
        let tau = self.coord.tau_d;
        let w = self.geometry.lane_width;
        let (sin_e, cos_e) = ego.psi.sin_cos();
        let (sin_n, cos_n) = other.state.psi.sin_cos();
        let vn = other.speed();
        let v_held = ego.v_applied;

        let (factor, dfactor, sign) = match fade {
            None => (1.0, 0.0, 0.0),
            Some(sign) => {
                let (_, s, ds) = self.fade(frame, other, sign)?;
                (s, ds, sign)
            }
        };
        let value = other.state.x - ego.x - tau * v_held * factor;

        // rho_dot = sign (v sin_e - vn sin_n) / w
        let mut rate = Affine {
            c_v: -cos_e - tau * v_held * dfactor * sign * sin_e / w,
            c_omega: 0.0,
            c_0: vn * cos_n + tau * v_held * dfactor * sign * vn * sin_n / w,
        };
        if let SpeedTerm::Lagged { period } = self.speed_term {
            // -tau factor (v - v_held) / period
            rate.c_v -= tau * factor / period;
            rate.c_0 += tau * factor * v_held / period;
        }
        Ok((value, rate))
    }

    /// Barrier value, `psi1` for second-order barriers, and the QP row.
    pub fn barrier_row(&self, id: BarrierId, frame: &NeighborFrame) -> Result<BarrierEval> {
        let other = frame.get(id.slot());
        let (value, psi1, row) = match id.shape() {
            Shape::Headway { fade } => {
                if id == BarrierId::B1 && !frame.ego.heading_ok() {
                    return Err(Error::HeadingOutOfRange {
                        vehicle: "ego".into(),
                        psi: frame.ego.psi,
                    });
                }
                let (value, rate) = self.headway_rate(frame, other, fade)?;
                let k1 = self.gains.gamma1_gain;
                let row = ConstraintRow {
                    a_v: rate.c_v,
                    a_omega: rate.c_omega,
                    a_delta_omega: 0.0,
                    rhs: -(rate.c_0 + k1 * value),
                    origin: RowOrigin::Barrier(id),
                };
                (value, None, row)
            }
            Shape::Lateral { ego_ahead, upper } => {
                let p = self.lateral_parts(frame, other, ego_ahead, upper)?;
                let (sin_e, cos_e) = frame.ego.psi.sin_cos();
                let k2 = self.gains.gamma2_gain;
                let mut c_v = p.d_x_ego * cos_e + p.d_y_ego * sin_e;
                let mut c_0 = p.d_x_other * other.speed() * other.state.psi.cos();
                if let SpeedTerm::Lagged { period } = self.speed_term {
                    c_v += p.d_v_held / period;
                    c_0 -= p.d_v_held * frame.ego.v_applied / period;
                }
                let row = ConstraintRow {
                    a_v: c_v,
                    a_omega: p.d_psi_ego,
                    a_delta_omega: 0.0,
                    rhs: -(c_0 + k2 * p.psi1),
                    origin: RowOrigin::Barrier(id),
                };
                (p.value, Some(p.psi1), row)
            }
        };
        if !value.is_finite() || !row.is_finite() {
            return Err(Error::CorruptFrame(format!("{} row is not finite: {row:?}", id.name())));
        }
        Ok(BarrierEval { id, value, psi1, row })
    }

    pub fn barrier_rows(&self, frame: &NeighborFrame) -> Result<[BarrierEval; 7]> {
        let mut rows = Vec::with_capacity(7);
        for id in BarrierId::ALL {
            rows.push(self.barrier_row(id, frame)?);
        }
        Ok(rows.try_into().expect("seven barriers"))
    }

    /// Lyapunov value `V = (y_ref - y_E)^2 / 2` and its slacked row.
    ///
    /// The held speed is always frozen here; the lag model only touches
    /// safety rows.
    pub fn lyapunov_row(&self, frame: &NeighborFrame, y_ref: f64) -> LyapunovEval {
        let ego = &frame.ego;
        let c = self.gains.alpha_gain;
        let m1 = self.gains.mu1_gain;
        let (sin_e, cos_e) = ego.psi.sin_cos();
        let err = y_ref - ego.y;
        let value = 0.5 * err * err;
        let eta0 = err * ego.v_applied * sin_e - c * value;

        let d_y = -ego.v_applied * sin_e + c * err;
        let d_psi = err * ego.v_applied * cos_e;
        let row = ConstraintRow {
            a_v: d_y * sin_e,
            a_omega: d_psi,
            a_delta_omega: 1.0,
            rhs: -m1 * eta0,
            origin: RowOrigin::Lyapunov,
        };
        LyapunovEval { value, eta0, row }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{classify_by_position, LaneGeometry};
    use crate::vehicle::VehicleState;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn set() -> CertificateSet {
        CertificateSet::new(
            LaneGeometry {
                lane_width: 4.0,
                lane_count: 3,
                epsilon: 0.1,
            },
            CoordinationConfig::default(),
            ClassKConfig::default(),
        )
    }

    fn frame_with(ego: VehicleState, others: &[VehicleState]) -> NeighborFrame {
        let s = set();
        classify_by_position(&ego, others, &s.geometry, 100.0, 30.0)
    }

    #[test]
    fn b1_value() {
        let ego = VehicleState::new(0.0, 8.0, 0.0, 20.0);
        let lead = VehicleState::new(50.0, 8.0, 0.0, 20.0);
        let f = frame_with(ego, &[lead]);
        assert_relative_eq!(set().eval_b(BarrierId::B1, &f).unwrap(), 32.0, epsilon = 1e-12);
    }

    #[test]
    fn b2_with_mock_neighbor() {
        let ego = VehicleState::new(0.0, 8.0, 0.0, 20.0);
        let f = frame_with(ego, &[]);
        let theta = 100.0 / (0.9 * 30.0);
        assert!(theta > 1.0);
        let lam = coordination::lambda(theta, &CoordinationConfig::default().lambda);
        assert!((lam - 1.01).abs() < 1e-9);
        let b2 = set().eval_b(BarrierId::B2, &f).unwrap();
        assert_relative_eq!(b2, 1.9 + 4.0 * lam, epsilon = 1e-12);
        assert!((b2 - 5.94).abs() < 1e-6);
    }

    #[test]
    fn b6_across_a_full_lane() {
        let ego = VehicleState::new(0.0, 8.0, 0.0, 20.0);
        let right = VehicleState::new(5.0, 4.0, 0.0, 20.0);
        let f = frame_with(ego, &[right]);
        let s = set();
        let sig = coordination::sigma(1.0, &s.coord.sigma);
        assert!(sig <= 0.0);
        let b6 = s.eval_b(BarrierId::B6, &f).unwrap();
        assert!(b6 >= 5.0);
        assert_relative_eq!(b6, 5.0 - 0.9 * 20.0 * sig, epsilon = 1e-12);
    }

    #[test]
    fn b1_row() {
        let ego = VehicleState::new(0.0, 8.0, 0.1, 20.0);
        let lead = VehicleState::new(40.0, 8.3, 0.05, 18.0);
        let f = frame_with(ego, &[lead]);
        let s = set();
        let e = s.barrier_row(BarrierId::B1, &f).unwrap();
        assert!(e.psi1.is_none());
        assert_relative_eq!(e.row.a_v, -(0.1f64.cos()), epsilon = 1e-15);
        assert_eq!(e.row.a_omega, 0.0);
        assert_relative_eq!(e.row.rhs, -18.0 * 0.05f64.cos() - e.value, epsilon = 1e-12);
    }

    #[test]
    fn b1_row_at_boundary_caps_speed_at_leader() {
        let ego = VehicleState::new(0.0, 8.0, 0.0, 20.0);
        let lead = VehicleState::new(18.0, 8.0, 0.0, 15.0);
        let f = frame_with(ego, &[lead]);
        let e = set().barrier_row(BarrierId::B1, &f).unwrap();
        assert_relative_eq!(e.value, 0.0, epsilon = 1e-12);
        assert!(e.row.margin(15.0, 0.0, 0.0) >= -1e-12);
        assert!(e.row.margin(15.0 + 1e-6, 0.0, 0.0) < 0.0);
    }

    #[test]
    fn b1_rejects_backward_heading() {
        let ego = VehicleState::new(0.0, 8.0, 2.0, 20.0);
        let f = frame_with(ego, &[]);
        assert!(matches!(
            set().barrier_row(BarrierId::B1, &f),
            Err(Error::HeadingOutOfRange { .. })
        ));
    }

    #[test]
    fn b6_row_speed_coefficient() {
        let ego = VehicleState::new(0.0, 6.5, 0.08, 20.0);
        let right = VehicleState::new(30.0, 4.2, 0.0, 18.0);
        let f = frame_with(ego, &[right]);
        let s = set();
        let rho = (6.5 - 4.2) / 4.0;
        let ds = coordination::sigma_prime(rho, &s.coord.sigma);
        let e = s.barrier_row(BarrierId::B6, &f).unwrap();
        let expected = -(0.08f64.cos()) - 0.9 * 20.0 * ds * 0.08f64.sin() / 4.0;
        assert_relative_eq!(e.row.a_v, expected, epsilon = 1e-14);
        assert_eq!(e.row.a_omega, 0.0);
    }

    #[test]
    fn b2_row_reduces_to_steering_when_unimpeded() {
        let ego = VehicleState::new(0.0, 8.0, 0.0, 20.0);
        let f = frame_with(ego, &[]);
        let s = set();
        let e = s.barrier_row(BarrierId::B2, &f).unwrap();
        // mocks sit deep in the sigmoid tail, lambda' vanishes
        let theta = 100.0 / 27.0;
        assert!(coordination::lambda_prime(theta, &s.coord.lambda) < 1e-12);
        assert_relative_eq!(e.row.a_omega, 20.0, epsilon = 1e-9);
        assert!(e.row.a_v.abs() < 1e-9);
        assert!(e.row.margin(20.0, 0.0, 0.0) >= 0.0);
    }

    #[test]
    fn lyapunov_equilibrium() {
        let ego = VehicleState::new(0.0, 8.0, 0.0, 20.0);
        let f = frame_with(ego, &[]);
        let l = set().lyapunov_row(&f, 8.0);
        assert_eq!((l.value, l.eta0, l.row.rhs), (0.0, 0.0, 0.0));
        assert!(l.row.margin(20.0, 0.0, 0.0) >= 0.0);
    }

    #[test]
    fn lyapunov_pushes_toward_target() {
        let ego = VehicleState::new(0.0, 8.0, 0.0, 20.0);
        let f = frame_with(ego, &[]);
        let l = set().lyapunov_row(&f, 12.0);
        assert!(l.eta0 < 0.0);
        assert_relative_eq!(l.eta0, -0.8 * 8.0, epsilon = 1e-12);
        assert!(l.row.rhs > 0.0);
        assert_eq!(l.row.a_v, 0.0);
        assert!(l.row.a_omega > 0.0);
        // without slack the row needs a left turn
        assert!(l.row.margin(20.0, 0.0, 0.0) < 0.0);
        let omega = l.row.rhs / l.row.a_omega;
        assert!(omega > 0.0 && l.row.margin(20.0, omega, 0.0) >= -1e-12);
    }

    #[test]
    fn lagged_rows_coincide_at_held_speed() {
        let ego = VehicleState::new(0.0, 9.0, 0.05, 20.0);
        let others = [
            VehicleState::new(30.0, 8.0, 0.0, 18.0),
            VehicleState::new(25.0, 12.0, 0.0, 22.0),
            VehicleState::new(-20.0, 4.0, 0.0, 25.0),
        ];
        let f = frame_with(ego, &others);
        let frozen = set();
        let lagged = CertificateSet {
            speed_term: SpeedTerm::Lagged { period: 0.1 },
            ..set()
        };
        for id in BarrierId::ALL {
            let a = frozen.barrier_row(id, &f).unwrap().row;
            let b = lagged.barrier_row(id, &f).unwrap().row;
            for omega in [-0.2, 0.0, 0.3] {
                assert_relative_eq!(a.margin(20.0, omega, 0.0), b.margin(20.0, omega, 0.0), epsilon = 1e-9, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn mock_lambda_slope_is_negligible() {
        let s = set();
        for v in [5.0, 15.0, 30.0] {
            let theta = 100.0 / (0.9 * 30.0f64.max(v));
            assert!(coordination::lambda_prime(theta, &s.coord.lambda) < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn unimpeded_vehicle_is_never_constrained(
            y_off in -1.9f64..1.9,
            v_held in 0.0f64..30.0,
            lane in 1i32..=3,
        ) {
            let s = set();
            let y = s.geometry.center(lane) + y_off;
            let ego = VehicleState::new(0.0, y, 0.0, v_held);
            let f = NeighborFrame::all_mock(ego, lane, &s.geometry, 100.0, 30.0);
            for e in s.barrier_rows(&f).unwrap() {
                prop_assert!(e.row.margin(v_held, 0.0, 0.0) >= 0.0, "{:?}", e);
            }
        }

        #[test]
        fn lane_bounds_are_free_of_lateral_constraints(
            lane in 1i32..=3,
            frac in 0.0f64..=1.0,
            v_held in 0.0f64..30.0,
            neighbors in proptest::collection::vec((any::<bool>(), 0.0f64..100.0, -0.5f64..0.5, 0.0f64..30.0), 6),
        ) {
            let s = set();
            let g = s.geometry;
            let y = g.y_min(lane) + frac * (g.y_max(lane) - g.y_min(lane));
            let ego = VehicleState::new(0.0, y, 0.0, v_held);
            let mut f = NeighborFrame::all_mock(ego, lane, &g, 100.0, 30.0);
            for (slot, (present, gap, dy, v)) in Slot::ALL.into_iter().zip(neighbors) {
                if present {
                    let n = f.get_mut(slot);
                    n.is_mock = false;
                    n.state = VehicleState::new(
                        if slot.is_front() { gap } else { -gap },
                        g.center(lane + slot.lane_offset()) + dy * g.lane_width,
                        0.0,
                        v,
                    );
                }
            }
            for id in [BarrierId::B2, BarrierId::B3, BarrierId::B4, BarrierId::B5] {
                let b = s.eval_b(id, &f).unwrap();
                prop_assert!(b >= 0.0, "{} = {b}", id.name());
            }
        }

        #[test]
        fn midline_admission(
            lane in 1i32..=2,
            v_held in 0.5f64..30.0,
            excess in 1.0f64..4.0,
            v_front in 0.0f64..30.0,
        ) {
            // +1F at least 0.9 safety distances ahead concedes half a lane
            let s = set();
            let g = s.geometry;
            let gap = 0.9 * s.coord.tau_d * v_held * excess;
            for k in 0..=100 {
                let y = g.y_max(lane) + g.lane_width / 2.0 * k as f64 / 100.0;
                let ego = VehicleState::new(0.0, y, 0.0, v_held);
                let mut f = NeighborFrame::all_mock(ego, lane, &g, 100.0, 30.0);
                let n = f.get_mut(Slot::LeftFront);
                n.is_mock = false;
                n.state = VehicleState::new(gap, g.center(lane + 1), 0.0, v_front);
                let b5 = s.eval_b(BarrierId::B5, &f).unwrap();
                prop_assert!(b5 >= -1e-12, "y = {y}: b5 = {b5}");
            }
        }
    }
}

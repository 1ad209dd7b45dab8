//! Per-vehicle controller: certificate rows in, held input out.

use serde::{Deserialize, Serialize};

use crate::certificates::{BarrierEval, CertificateSet, ClassKConfig, ConstraintRow, LyapunovEval, SpeedTerm};
use crate::error::Error;
use crate::coordination::CoordinationConfig;
use crate::error::Result;
use crate::perception::{LaneGeometry, NeighborFrame};
use crate::qp::{self, InputBounds, QpProblem, QpSolution, QpStatus, QpWeights, SolverSettings};
use crate::vehicle::ControlInput;

/// Ego speed inside the barrier chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpeedModel {
    /// Held speed treated as constant.
    Frozen,
    /// Held speed follows the command with a first-order lag of one control period.
    #[default]
    Lagged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerParams {
    pub coordination: CoordinationConfig,
    pub gains: ClassKConfig,
    pub weights: QpWeights,
    pub bounds: InputBounds,
    pub speed_model: SpeedModel,
    pub speed_floor: f64,
    pub v_mock: f64,
    /// Set by the scenario; not part of the serialized parameters.
    #[serde(skip)]
    pub control_period: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        let bounds = InputBounds::default();
        Self {
            coordination: CoordinationConfig::default(),
            gains: ClassKConfig::default(),
            weights: QpWeights::default(),
            bounds,
            speed_model: SpeedModel::default(),
            speed_floor: 0.5,
            v_mock: bounds.v_max,
            control_period: 0.1,
        }
    }
}

impl ControllerParams {
    pub fn certificates(&self, geometry: &LaneGeometry) -> CertificateSet {
        CertificateSet {
            geometry: *geometry,
            coord: self.coordination,
            gains: self.gains,
            speed_term: match self.speed_model {
                SpeedModel::Frozen => SpeedTerm::Frozen,
                SpeedModel::Lagged => SpeedTerm::Lagged { period: self.control_period },
            },
            speed_floor: self.speed_floor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gains.validate()?;
        self.weights.validate()?;
        self.bounds.validate()?;
        if !(self.speed_floor > 0.0) || !(self.v_mock > 0.0) {
            return Err(Error::InvalidScenario("speed_floor and v_mock must be positive".into()));
        }
        if !(self.control_period > 0.0) {
            return Err(Error::InvalidScenario("control period must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct References {
    pub v_ref: f64,
    pub y_ref: f64,
}

#[derive(Debug, Clone)]
pub struct Assembled {
    pub qp: QpProblem,
    pub barriers: [BarrierEval; 7],
    pub lyapunov: LyapunovEval,
}

/// Eight rows (seven barriers, then the Lyapunov row) and the input box.
pub fn assemble(frame: &NeighborFrame, refs: References, geometry: &LaneGeometry, params: &ControllerParams) -> Result<Assembled> {
    let certs = params.certificates(geometry);
    let barriers = certs.barrier_rows(frame)?;
    let lyapunov = certs.lyapunov_row(frame, refs.y_ref);
    let mut rows: Vec<ConstraintRow> = barriers.iter().map(|b| b.row).collect();
    rows.push(lyapunov.row);
    Ok(Assembled {
        qp: QpProblem {
            weights: params.weights,
            bounds: params.bounds,
            v_ref: refs.v_ref,
            rows,
        },
        barriers,
        lyapunov,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// `b1..b7` on the frame; `NaN` when the frame could not be evaluated.
    pub barriers: [f64; 7],
    pub lyapunov: f64,
    pub delta_v: f64,
    pub delta_omega: f64,
    pub status: QpStatus,
    pub fallback: bool,
    pub event: Option<String>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub input: ControlInput,
    pub diagnostics: StepDiagnostics,
    pub solution: Option<QpSolution>,
}

/// Solve this vehicle's QP. Never fails: infeasibility, iteration limits and
/// invalid frames all fall back to `(v_min, 0)` with an event.
pub fn control_step(frame: &NeighborFrame, refs: References, geometry: &LaneGeometry, params: &ControllerParams) -> StepOutput {
    let fallback = ControlInput::new(params.bounds.v_min, 0.0);
    let assembled = match assemble(frame, refs, geometry, params) {
        Ok(a) => a,
        Err(e) => {
            let barriers = params
                .certificates(geometry)
                .eval_all(frame)
                .unwrap_or([f64::NAN; 7]);
            return StepOutput {
                input: fallback,
                diagnostics: StepDiagnostics {
                    barriers,
                    lyapunov: f64::NAN,
                    delta_v: refs.v_ref - fallback.v,
                    delta_omega: 0.0,
                    status: QpStatus::Invalid,
                    fallback: true,
                    event: Some(format!("fallback: {e}")),
                    iterations: 0,
                    kkt_residual: f64::NAN,
                },
                solution: None,
            };
        }
    };
    let sol = qp::solve_with(&assembled.qp, &SolverSettings::default());
    let barriers = assembled.barriers.map(|b| b.value);
    let (input, fell_back, event) = match sol.status {
        QpStatus::Optimal => (ControlInput::new(sol.v, sol.omega), false, None),
        other => (fallback, true, Some(format!("fallback: qp {other:?}"))),
    };
    StepOutput {
        input,
        diagnostics: StepDiagnostics {
            barriers,
            lyapunov: assembled.lyapunov.value,
            delta_v: refs.v_ref - input.v,
            delta_omega: if fell_back { 0.0 } else { sol.delta_omega },
            status: sol.status,
            fallback: fell_back,
            event,
            iterations: sol.iterations,
            kkt_residual: sol.kkt_residual,
        },
        solution: Some(sol),
    }
}

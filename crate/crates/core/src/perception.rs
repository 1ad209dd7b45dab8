//! Neighbor classification into the six slots around an ego vehicle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneGeometry {
    pub lane_width: f64,
    pub lane_count: i32,
    /// Margin that keeps lane bounds off the midline between lanes.
    pub epsilon: f64,
}

impl Default for LaneGeometry {
    fn default() -> Self {
        Self {
            lane_width: 4.0,
            lane_count: 2,
            epsilon: 0.1,
        }
    }
}

impl LaneGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.lane_width > 0.0) {
            return Err(Error::InvalidScenario("lane_width must be positive".into()));
        }
        if self.lane_count < 2 {
            return Err(Error::InvalidScenario("lane_count must be at least 2".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon < self.lane_width / 2.0) {
            return Err(Error::InvalidScenario(
                "epsilon must lie in [0, lane_width / 2)".into(),
            ));
        }
        Ok(())
    }

    pub fn center(&self, lane: i32) -> f64 {
        lane as f64 * self.lane_width
    }

    pub fn y_min(&self, lane: i32) -> f64 {
        self.center(lane) - self.lane_width / 2.0 + self.epsilon
    }

    pub fn y_max(&self, lane: i32) -> f64 {
        self.center(lane) + self.lane_width / 2.0 - self.epsilon
    }
}

/// Nearest lane center, clamped to the road.
pub fn lane_of(y: f64, geometry: &LaneGeometry) -> i32 {
    let raw = (y / geometry.lane_width).round();
    (raw as i32).clamp(1, geometry.lane_count)
}

/// Lane assignment with hysteresis.
///
/// A vehicle keeps `previous` until it comes within `capture * lane_width`
/// of another lane's center. `capture = 0.5` reproduces [`lane_of`].
pub fn track_lane(previous: Option<i32>, y: f64, geometry: &LaneGeometry, capture: f64) -> i32 {
    let nearest = lane_of(y, geometry);
    match previous {
        None => nearest,
        Some(prev) if prev == nearest => nearest,
        Some(prev) => {
            if (y - geometry.center(nearest)).abs() <= capture * geometry.lane_width {
                nearest
            } else {
                prev
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    #[serde(rename = "+1F")]
    LeftFront,
    #[serde(rename = "+1B")]
    LeftBack,
    #[serde(rename = "0F")]
    SameFront,
    #[serde(rename = "0B")]
    SameBack,
    #[serde(rename = "-1F")]
    RightFront,
    #[serde(rename = "-1B")]
    RightBack,
}

impl Slot {
    pub const ALL: [Slot; 6] = [
        Slot::LeftFront,
        Slot::LeftBack,
        Slot::SameFront,
        Slot::SameBack,
        Slot::RightFront,
        Slot::RightBack,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn lane_offset(self) -> i32 {
        match self {
            Slot::LeftFront | Slot::LeftBack => 1,
            Slot::SameFront | Slot::SameBack => 0,
            Slot::RightFront | Slot::RightBack => -1,
        }
    }

    pub fn is_front(self) -> bool {
        matches!(self, Slot::LeftFront | Slot::SameFront | Slot::RightFront)
    }

    fn from_parts(offset: i32, front: bool) -> Option<Slot> {
        Some(match (offset, front) {
            (1, true) => Slot::LeftFront,
            (1, false) => Slot::LeftBack,
            (0, true) => Slot::SameFront,
            (0, false) => Slot::SameBack,
            (-1, true) => Slot::RightFront,
            (-1, false) => Slot::RightBack,
            _ => return None,
        })
    }

    pub fn label(self) -> &'static str {
        match self {
            Slot::LeftFront => "+1F",
            Slot::LeftBack => "+1B",
            Slot::SameFront => "0F",
            Slot::SameBack => "0B",
            Slot::RightFront => "-1F",
            Slot::RightBack => "-1B",
        }
    }
}

/// Another vehicle as seen by the ego: its state and its lane index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observed {
    pub state: VehicleState,
    pub lane: i32,
    /// Caller-side identifier carried into the frame.
    pub id: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub state: VehicleState,
    pub is_mock: bool,
    pub id: Option<usize>,
}

impl Neighbor {
    /// Measured speed of the occupant.
    pub fn speed(&self) -> f64 {
        self.state.v_applied
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborFrame {
    pub ego: VehicleState,
    pub ego_lane: i32,
    pub slots: [Neighbor; 6],
}

impl NeighborFrame {
    pub fn get(&self, slot: Slot) -> &Neighbor {
        &self.slots[slot.index()]
    }

    pub fn get_mut(&mut self, slot: Slot) -> &mut Neighbor {
        &mut self.slots[slot.index()]
    }

    /// Frame with every slot holding a mock.
    pub fn all_mock(ego: VehicleState, ego_lane: i32, geometry: &LaneGeometry, sensor_range: f64, v_mock: f64) -> Self {
        let slots = Slot::ALL.map(|s| mock(&ego, ego_lane, s, geometry, sensor_range, v_mock));
        Self { ego, ego_lane, slots }
    }
}

fn mock(ego: &VehicleState, ego_lane: i32, slot: Slot, geometry: &LaneGeometry, sensor_range: f64, v_mock: f64) -> Neighbor {
    let x = if slot.is_front() {
        ego.x + sensor_range
    } else {
        ego.x - sensor_range
    };
    Neighbor {
        state: VehicleState::new(x, geometry.center(ego_lane + slot.lane_offset()), 0.0, v_mock),
        is_mock: true,
        id: None,
    }
}

/// Sort `others` into the six slots around `ego`; empty slots get mocks at
/// the edge of the sensor range.
pub fn classify(
    ego: &VehicleState,
    ego_lane: i32,
    others: &[Observed],
    geometry: &LaneGeometry,
    sensor_range: f64,
    v_mock: f64,
) -> NeighborFrame {
    let mut best: [Option<(f64, &Observed)>; 6] = [None; 6];
    for other in others {
        let dx = other.state.x - ego.x;
        let dy = other.state.y - ego.y;
        if (dx * dx + dy * dy).sqrt() > sensor_range {
            continue;
        }
        let offset = other.lane - ego_lane;
        let front = if dx > 0.0 {
            true
        } else if dx < 0.0 {
            false
        } else {
            // level with the ego: left counts as front, right as back
            offset >= 0
        };
        let Some(slot) = Slot::from_parts(offset, front) else {
            continue;
        };
        let entry = &mut best[slot.index()];
        if entry.is_none_or(|(d, _)| dx.abs() < d) {
            *entry = Some((dx.abs(), other));
        }
    }

    let slots = Slot::ALL.map(|slot| match best[slot.index()] {
        Some((_, o)) => Neighbor {
            state: o.state,
            is_mock: false,
            id: o.id,
        },
        None => mock(ego, ego_lane, slot, geometry, sensor_range, v_mock),
    });
    NeighborFrame {
        ego: *ego,
        ego_lane,
        slots,
    }
}

/// [`classify`] with every lane index taken from [`lane_of`].
pub fn classify_by_position(
    ego: &VehicleState,
    others: &[VehicleState],
    geometry: &LaneGeometry,
    sensor_range: f64,
    v_mock: f64,
) -> NeighborFrame {
    let observed: Vec<Observed> = others
        .iter()
        .enumerate()
        .map(|(i, s)| Observed {
            state: *s,
            lane: lane_of(s.y, geometry),
            id: Some(i),
        })
        .collect();
    classify(ego, lane_of(ego.y, geometry), &observed, geometry, sensor_range, v_mock)
}

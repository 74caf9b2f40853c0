//! Scenario data model: map (lanes, roads, junctions with signal programs)
//! plus agents with their travel schedules.

mod grid;
mod io;
mod straight;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, Polyline, Vec2};

pub use grid::{generate_grid, GridError, GridParams};
pub use straight::{straight_road, STRAIGHT_ROAD_ID};
pub use io::{load, save, LoadError, SaveError, FORMAT_VERSION, SCENARIO_EXTENSION};
pub use validate::{validate, ElementRef, Rule, Violation};

/// Default lane width used for lane association, meters.
pub const DEFAULT_LANE_WIDTH: f64 = 3.5;
/// Default simulation tick, seconds.
pub const DEFAULT_TICK: f64 = 0.1;

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(
    /// Lane identifier.
    LaneId
);
id_type!(
    /// Identifier shared by roads and junctions (the lane containers).
    ContainerId
);
id_type!(
    /// Agent identifier.
    AgentId
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneType {
    Driving,
    Biking,
    Walking,
}

fn default_lane_width() -> f64 {
    DEFAULT_LANE_WIDTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: LaneId,
    pub lane_type: LaneType,
    pub centerline: Vec<Vec2>,
    #[serde(default)]
    pub predecessors: Vec<LaneId>,
    #[serde(default)]
    pub successors: Vec<LaneId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_neighbor: Option<LaneId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_neighbor: Option<LaneId>,
    pub parent: ContainerId,
    pub max_speed: f64,
    #[serde(default = "default_lane_width")]
    pub width: f64,
}

impl Lane {
    pub fn polyline(&self) -> Polyline {
        Polyline::new(self.centerline.clone())
    }

    pub fn length(&self) -> f64 {
        self.centerline.windows(2).map(|w| w[0].distance(w[1])).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub id: ContainerId,
    pub lane_ids: Vec<LaneId>,
    pub boundary: Vec<Vec2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightState {
    Green,
    Yellow,
    Red,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPhase {
    pub duration: f64,
    pub states: Vec<LightState>,
}

/// Fixed-time signal program, cycled from time zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalProgram {
    pub controlled_lane_ids: Vec<LaneId>,
    pub phases: Vec<SignalPhase>,
}

impl SignalProgram {
    pub fn cycle_length(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }

    /// Index of the phase active at `time`.
    pub fn phase_at(&self, time: f64) -> usize {
        let cycle = self.cycle_length();
        if cycle <= 0.0 || self.phases.is_empty() {
            return 0;
        }
        let mut t = time.rem_euclid(cycle);
        for (i, p) in self.phases.iter().enumerate() {
            if t < p.duration {
                return i;
            }
            t -= p.duration;
        }
        self.phases.len() - 1
    }

    pub fn state_of(&self, lane: LaneId, time: f64) -> Option<LightState> {
        let k = self.controlled_lane_ids.iter().position(|l| *l == lane)?;
        self.phases.get(self.phase_at(time))?.states.get(k).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub id: ContainerId,
    pub lane_ids: Vec<LaneId>,
    pub boundary: Vec<Vec2>,
    #[serde(default)]
    pub traffic_lights: Vec<SignalProgram>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Map {
    pub lanes: Vec<Lane>,
    pub roads: Vec<Road>,
    pub junctions: Vec<Junction>,
}

impl Map {
    pub fn lane(&self, id: LaneId) -> Option<&Lane> {
        self.lanes.iter().find(|l| l.id == id)
    }

    /// Lookup table from lane id to index in `lanes`.
    pub fn lane_index(&self) -> BTreeMap<LaneId, usize> {
        self.lanes.iter().enumerate().map(|(i, l)| (l.id, i)).collect()
    }

    /// All drivable-area boundary polygons (roads then junctions).
    pub fn boundaries(&self) -> impl Iterator<Item = &[Vec2]> {
        self.roads
            .iter()
            .map(|r| r.boundary.as_slice())
            .chain(self.junctions.iter().map(|j| j.boundary.as_slice()))
    }

    /// Signal state of a controlled lane at `time`, if any program covers it.
    pub fn signal_state(&self, lane: LaneId, time: f64) -> Option<LightState> {
        self.junctions
            .iter()
            .flat_map(|j| j.traffic_lights.iter())
            .find_map(|p| p.state_of(lane, time))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentType {
    Vehicle,
    Pedestrian,
    Cyclist,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentAttributes {
    pub agent_type: AgentType,
    pub length: f64,
    pub width: f64,
}

impl AgentAttributes {
    pub fn vehicle(length: f64, width: f64) -> Self {
        AgentAttributes {
            agent_type: AgentType::Vehicle,
            length,
            width,
        }
    }
}

/// Kinematic state: world-frame position, speed and heading.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec2,
    pub speed: f64,
    pub heading: f64,
}

impl AgentState {
    pub fn new(position: Vec2, speed: f64, heading: f64) -> Self {
        AgentState {
            position,
            speed,
            heading,
        }
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_heading(self.heading) * self.speed
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.speed.is_finite() && self.heading.is_finite()
    }

    /// Linear interpolation with shortest-arc heading blend.
    pub fn lerp(&self, other: &AgentState, t: f64) -> AgentState {
        let dh = crate::geometry::angle_diff(other.heading, self.heading);
        AgentState {
            position: self.position.lerp(other.position, t),
            speed: self.speed + (other.speed - self.speed) * t,
            heading: normalize_angle(self.heading + dh * t),
        }
    }
}

/// One sample of a reference route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutePoint {
    pub t: f64,
    #[serde(flatten)]
    pub state: AgentState,
}

/// Trip-level goal: be at `position` by `arrival_time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub position: Vec2,
    pub arrival_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub departure_time: f64,
    #[serde(default)]
    pub reference_route: Vec<RoutePoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub waypoints: Vec<Waypoint>,
}

impl Schedule {
    /// Time of the last reference-route sample.
    pub fn end_time(&self) -> Option<f64> {
        self.reference_route.last().map(|p| p.t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: AgentId,
    pub attributes: AgentAttributes,
    pub schedules: Vec<Schedule>,
}

fn default_tick() -> f64 {
    DEFAULT_TICK
}

/// An immutable world description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub map: Map,
    pub agents: Vec<Agent>,
    #[serde(default)]
    pub current_time: f64,
    #[serde(default = "default_tick")]
    pub tick: f64,
}

impl Scenario {
    pub fn new(map: Map, agents: Vec<Agent>) -> Self {
        Scenario {
            map,
            agents,
            current_time: 0.0,
            tick: DEFAULT_TICK,
        }
    }

    pub fn agent(&self, id: AgentId) -> Option<&Agent> {
        self.agents.iter().find(|a| a.id == id)
    }

    /// Latest reference-route timestamp over all agents.
    pub fn horizon(&self) -> f64 {
        self.agents
            .iter()
            .flat_map(|a| a.schedules.iter())
            .filter_map(|s| s.end_time())
            .fold(self.current_time, f64::max)
    }

    /// Resamples every reference route onto the scenario tick grid
    /// (`t = current_time + k * tick`). Routes already on the grid are left
    /// untouched.
    pub fn resample_routes(&mut self) {
        let tick = self.tick;
        let origin = self.current_time;
        for agent in &mut self.agents {
            for sched in &mut agent.schedules {
                if let Some(r) = resample_route(&sched.reference_route, origin, tick) {
                    sched.reference_route = r;
                }
            }
        }
    }
}

fn on_grid(t: f64, origin: f64, tick: f64) -> bool {
    let k = ((t - origin) / tick).round();
    (origin + k * tick - t).abs() <= 1e-9
}

/// Returns `None` when the route is already sampled on the grid.
fn resample_route(route: &[RoutePoint], origin: f64, tick: f64) -> Option<Vec<RoutePoint>> {
    if route.len() < 2 {
        if route.len() == 1 && !on_grid(route[0].t, origin, tick) {
            let k = ((route[0].t - origin) / tick).round();
            return Some(vec![RoutePoint {
                t: origin + k * tick,
                state: route[0].state,
            }]);
        }
        return None;
    }
    let regular = route.iter().all(|p| on_grid(p.t, origin, tick))
        && route
            .windows(2)
            .all(|w| ((w[1].t - w[0].t) - tick).abs() <= 1e-9);
    if regular {
        return None;
    }
    let first = route[0].t;
    let last = route[route.len() - 1].t;
    let k0 = ((first - origin) / tick - 1e-9).ceil() as i64;
    let k1 = ((last - origin) / tick + 1e-9).floor() as i64;
    let mut out = Vec::new();
    let mut j = 0;
    for k in k0..=k1 {
        let t = origin + k as f64 * tick;
        while j + 2 < route.len() && route[j + 1].t < t {
            j += 1;
        }
        let (a, b) = (&route[j], &route[j + 1]);
        let span = b.t - a.t;
        let u = if span > 0.0 { ((t - a.t) / span).clamp(0.0, 1.0) } else { 0.0 };
        out.push(RoutePoint {
            t,
            state: a.state.lerp(&b.state, u),
        });
    }
    Some(out)
}
